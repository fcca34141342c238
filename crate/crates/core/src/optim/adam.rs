//! Minimal Adam optimizers over the parameter layouts the fit loop uses.

use nalgebra::{Vector3, Vector4};

use crate::Real;

macro_rules! adam_impl {
    ($name:ident, $elem:ty, $zero:expr, $sq:expr, $upd:expr) => {
        pub struct $name {
            pub lr: Real,
            pub beta1: Real,
            pub beta2: Real,
            pub eps: Real,
            t: u32,
            m: Vec<$elem>,
            v: Vec<$elem>,
        }

        impl $name {
            pub fn new(lr: Real, beta1: Real, beta2: Real) -> Self {
                Self {
                    lr,
                    beta1,
                    beta2,
                    eps: 1e-8,
                    t: 0,
                    m: Vec::new(),
                    v: Vec::new(),
                }
            }

            fn ensure_len(&mut self, len: usize) {
                if self.m.len() != len {
                    self.m = vec![$zero; len];
                    self.v = vec![$zero; len];
                }
            }

            /// Remap the moment vectors after the parameter set changed:
            /// entry k of the new state comes from old entry `from[k]`.
            pub fn remap(&mut self, from: &[usize]) {
                if self.m.is_empty() {
                    return;
                }
                self.m = from.iter().map(|&i| self.m[i]).collect();
                self.v = from.iter().map(|&i| self.v[i]).collect();
            }

            pub fn step(&mut self, params: &mut [$elem], grads: &[$elem]) {
                assert_eq!(params.len(), grads.len());
                self.ensure_len(params.len());
                self.t += 1;
                let b1 = self.beta1;
                let b2 = self.beta2;
                let bias1 = 1.0 - b1.powi(self.t as i32);
                let bias2 = 1.0 - b2.powi(self.t as i32);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = self.m[i] * b1 + g * (1.0 - b1);
                    let gsq: $elem = $sq(&g);
                    self.v[i] = self.v[i] * b2 + gsq * (1.0 - b2);
                    let m_hat = self.m[i] / bias1;
                    let v_hat = self.v[i] / bias2;
                    $upd(&mut params[i], &m_hat, &v_hat, self.lr, self.eps);
                }
            }
        }
    };
}

adam_impl!(
    AdamScalar,
    Real,
    0.0,
    |g: &Real| g * g,
    |p: &mut Real, m: &Real, v: &Real, lr: Real, eps: Real| {
        *p -= lr * m / (v.sqrt() + eps);
    }
);

adam_impl!(
    AdamVec3,
    Vector3<Real>,
    Vector3::zeros(),
    |g: &Vector3<Real>| g.component_mul(g),
    |p: &mut Vector3<Real>, m: &Vector3<Real>, v: &Vector3<Real>, lr: Real, eps: Real| {
        for k in 0..3 {
            p[k] -= lr * m[k] / (v[k].sqrt() + eps);
        }
    }
);

adam_impl!(
    AdamVec4,
    Vector4<Real>,
    Vector4::zeros(),
    |g: &Vector4<Real>| g.component_mul(g),
    |p: &mut Vector4<Real>, m: &Vector4<Real>, v: &Vector4<Real>, lr: Real, eps: Real| {
        for k in 0..4 {
            p[k] -= lr * m[k] / (v[k].sqrt() + eps);
        }
    }
);
