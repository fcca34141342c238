//! se(3)/SE(3) kernel: twists, exponential/log maps, the six fixed generators,
//! and the rotation parameterizations used by the rest of the crate.
//!
//! Conventions:
//! - A twist is ordered (omega, v): rotation part first, translation second.
//!   The same ordering is used wherever a twist is flattened to 6 numbers.
//! - Rotations are stored as 3x3 matrices; unit quaternions (w, x, y, z)
//!   appear only at the I/O boundary.
//! - `exp` uses Rodrigues plus the left Jacobian V(omega); below the
//!   small-angle threshold both switch to second-order series.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::num::{real, Scalar};

/// Angle below which Rodrigues/left-Jacobian coefficients use series expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Element of se(3): rotation part `omega` (radians) and translation part `v`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist<T: Scalar> {
    pub omega: Vector3<T>,
    pub v: Vector3<T>,
}

impl<T: Scalar> Twist<T> {
    pub fn new(omega: Vector3<T>, v: Vector3<T>) -> Self {
        Twist { omega, v }
    }

    pub fn zero() -> Self {
        Twist {
            omega: Vector3::zeros(),
            v: Vector3::zeros(),
        }
    }

    /// Flatten to [omega_x, omega_y, omega_z, v_x, v_y, v_z].
    pub fn to_array(&self) -> [T; 6] {
        [
            self.omega.x, self.omega.y, self.omega.z, self.v.x, self.v.y, self.v.z,
        ]
    }

    pub fn from_array(a: [T; 6]) -> Self {
        Twist {
            omega: Vector3::new(a[0], a[1], a[2]),
            v: Vector3::new(a[3], a[4], a[5]),
        }
    }

    pub fn scaled(&self, s: T) -> Self {
        Twist {
            omega: self.omega * s,
            v: self.v * s,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Twist {
            omega: self.omega + other.omega,
            v: self.v + other.v,
        }
    }

    pub fn dot(&self, other: &Self) -> T {
        self.omega.dot(&other.omega) + self.v.dot(&other.v)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite_scalar())
    }

    /// 4x4 matrix embedding [[skew(omega), v], [0, 0]].
    pub fn hat(&self) -> Matrix4<T> {
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&self.omega));
        m[(0, 3)] = self.v.x;
        m[(1, 3)] = self.v.y;
        m[(2, 3)] = self.v.z;
        m
    }

    pub fn norm_inf(&self) -> T {
        self.to_array()
            .iter()
            .fold(T::zero(), |acc, x| acc.max(x.abs()))
    }
}

/// Rigid transform with an orthonormal rotation (det +1) and a translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform<T: Scalar> {
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
}

impl<T: Scalar> RigidTransform<T> {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Build from parts without validation; use for rotations known orthonormal.
    pub fn from_parts(rotation: Matrix3<T>, translation: Vector3<T>) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    /// Build from a matrix that must be orthonormal with det +1 within `tol`,
    /// then polar-project it onto SO(3).
    pub fn try_from_parts(rotation: Matrix3<T>, translation: Vector3<T>, tol: T) -> Result<Self> {
        let gram = rotation.transpose() * rotation;
        let ortho_err = (gram - Matrix3::identity()).abs().max();
        if ortho_err > tol {
            return Err(Error::Validation(format!(
                "rotation is not orthonormal: max |R^T R - I| = {:.3e}",
                ortho_err.to_f64().unwrap_or(f64::NAN)
            )));
        }
        let det = rotation.determinant();
        if (det - T::one()).abs() > tol {
            return Err(Error::Validation(format!(
                "rotation determinant {} is not +1 (reflections are rejected)",
                det.to_f64().unwrap_or(f64::NAN)
            )));
        }
        Ok(RigidTransform {
            rotation: orthonormalize(&rotation),
            translation,
        })
    }

    pub fn apply(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn to_homogeneous(&self) -> Matrix4<T> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m[(0, 3)] = self.translation.x;
        m[(1, 3)] = self.translation.y;
        m[(2, 3)] = self.translation.z;
        m
    }

    pub fn max_orthonormality_error(&self) -> T {
        let gram = self.rotation.transpose() * self.rotation;
        (gram - Matrix3::identity()).abs().max()
    }
}

/// The six frozen generators: unit translations along X/Y/Z, then unit
/// rotations about X/Y/Z. Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedGeneratorSet<T: Scalar> {
    generators: [Twist<T>; 6],
}

impl<T: Scalar> FixedGeneratorSet<T> {
    pub fn standard() -> Self {
        let e = |i: usize| {
            let mut v = Vector3::zeros();
            v[i] = T::one();
            v
        };
        FixedGeneratorSet {
            generators: [
                Twist::new(Vector3::zeros(), e(0)),
                Twist::new(Vector3::zeros(), e(1)),
                Twist::new(Vector3::zeros(), e(2)),
                Twist::new(e(0), Vector3::zeros()),
                Twist::new(e(1), Vector3::zeros()),
                Twist::new(e(2), Vector3::zeros()),
            ],
        }
    }

    pub fn as_slice(&self) -> &[Twist<T>; 6] {
        &self.generators
    }

    pub fn get(&self, i: usize) -> &Twist<T> {
        &self.generators[i]
    }
}

impl<T: Scalar> Default for FixedGeneratorSet<T> {
    fn default() -> Self {
        Self::standard()
    }
}

pub fn skew<T: Scalar>(w: &Vector3<T>) -> Matrix3<T> {
    Matrix3::new(
        T::zero(),
        -w.z,
        w.y,
        w.z,
        T::zero(),
        -w.x,
        -w.y,
        w.x,
        T::zero(),
    )
}

/// Rodrigues rotation: exp of skew(omega).
pub fn rodrigues<T: Scalar>(omega: &Vector3<T>) -> Matrix3<T> {
    let theta2 = omega.norm_squared();
    let k = skew(omega);
    let (a, b); // R = I + a*K + b*K^2
    if theta2 < real::<T>(SMALL_ANGLE * SMALL_ANGLE) {
        a = T::one() - theta2 / real(6.0);
        b = real::<T>(0.5) - theta2 / real(24.0);
    } else {
        let theta = theta2.sqrt();
        a = theta.sin() / theta;
        b = (T::one() - theta.cos()) / theta2;
    }
    Matrix3::identity() + k * a + k * k * b
}

/// Left Jacobian of SO(3): V(omega) with exp translation t = V * v.
pub fn so3_left_jacobian<T: Scalar>(omega: &Vector3<T>) -> Matrix3<T> {
    let theta2 = omega.norm_squared();
    let k = skew(omega);
    let (a, b); // V = I + a*K + b*K^2
    if theta2 < real::<T>(SMALL_ANGLE * SMALL_ANGLE) {
        a = real::<T>(0.5) - theta2 / real(24.0);
        b = real::<T>(1.0 / 6.0) - theta2 / real(120.0);
    } else {
        let theta = theta2.sqrt();
        a = (T::one() - theta.cos()) / theta2;
        b = (theta - theta.sin()) / (theta2 * theta);
    }
    Matrix3::identity() + k * a + k * k * b
}

/// Exponential map se(3) -> SE(3).
pub fn exp<T: Scalar>(xi: &Twist<T>) -> Result<RigidTransform<T>> {
    if !xi.is_finite() {
        return Err(Error::InvalidArgument(
            "twist has non-finite entries".into(),
        ));
    }
    Ok(exp_unchecked(xi))
}

pub fn exp_unchecked<T: Scalar>(xi: &Twist<T>) -> RigidTransform<T> {
    RigidTransform {
        rotation: rodrigues(&xi.omega),
        translation: so3_left_jacobian(&xi.omega) * xi.v,
    }
}

/// Principal-branch log map SE(3) -> se(3).
///
/// Errors when the rotation angle is within 1e-6 of pi, where the axis
/// (and therefore the branch) is ambiguous.
pub fn log<T: Scalar>(t: &RigidTransform<T>) -> Result<Twist<T>> {
    let omega = so3_log(&t.rotation)?;
    let v_inv = so3_left_jacobian(&omega)
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("left Jacobian is singular".into()))?;
    Ok(Twist {
        omega,
        v: v_inv * t.translation,
    })
}

/// Principal-branch log map of a rotation matrix.
pub fn so3_log<T: Scalar>(r: &Matrix3<T>) -> Result<Vector3<T>> {
    let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
    let cos = ((trace - T::one()) * real(0.5)).clamp(-T::one(), T::one());
    let theta = cos.acos();
    let margin = real::<T>(1e-6);
    if theta > T::pi() - margin {
        return Err(Error::BranchAmbiguity {
            angle: theta.to_f64().unwrap_or(f64::NAN),
            margin: 1e-6,
        });
    }
    let axis_raw = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    if theta < real(SMALL_ANGLE) {
        // omega ~ vee(R - R^T)/2 to second order
        return Ok(axis_raw * real::<T>(0.5));
    }
    Ok(axis_raw * (theta / (real::<T>(2.0) * theta.sin())))
}

/// Group composition: (a.R * b.R, a.R * b.t + a.t).
pub fn compose<T: Scalar>(a: &RigidTransform<T>, b: &RigidTransform<T>) -> RigidTransform<T> {
    RigidTransform {
        rotation: a.rotation * b.rotation,
        translation: a.rotation * b.translation + a.translation,
    }
}

/// Nearest rotation by polar projection (SVD), fixing drift after long
/// composition chains.
pub fn orthonormalize<T: Scalar>(m: &Matrix3<T>) -> Matrix3<T> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd of 3x3 always yields u");
    let vt = svd.v_t.expect("svd of 3x3 always yields v_t");
    let det = (u * vt).determinant();
    let mut d = Matrix3::identity();
    d[(2, 2)] = if det < T::zero() { -T::one() } else { T::one() };
    u * d * vt
}

/// Q block of the SE(3) left Jacobian (the translation-rotation coupling).
///
/// With the (omega, v) twist ordering the full left Jacobian is
/// [[J(omega), 0], [Q(v, omega), J(omega)]].
pub fn se3_q_block<T: Scalar>(v: &Vector3<T>, omega: &Vector3<T>) -> Matrix3<T> {
    let p = skew(v);
    let w = skew(omega);
    let theta2 = omega.norm_squared();

    // Series coefficients; closed forms above the small-angle threshold.
    let (b, c, d);
    if theta2 < real::<T>(1e-12) {
        b = real::<T>(1.0 / 6.0) - theta2 / real(120.0);
        c = real::<T>(-1.0 / 24.0) + theta2 / real(720.0);
        d = real::<T>(-1.0 / 60.0) + theta2 / real(1260.0);
    } else {
        let theta = theta2.sqrt();
        let t3 = theta2 * theta;
        let t4 = theta2 * theta2;
        let t5 = t4 * theta;
        let (s, co) = (theta.sin(), theta.cos());
        b = (theta - s) / t3;
        c = (T::one() - theta2 * real::<T>(0.5) - co) / t4;
        d = c - (theta - s - t3 / real::<T>(6.0)) / t5 * real::<T>(3.0);
    }

    let wp = w * p;
    let pw = p * w;
    let wpw = wp * w;
    let wwp = w * wp;
    let pww = pw * w;
    let wpww = wpw * w;
    let wwpw = w * wpw;

    p * real::<T>(0.5) + (wp + pw + wpw) * b - (wwp + pww - wpw * real::<T>(3.0)) * c
        - (wpww + wwpw) * (d * real::<T>(0.5))
}

/// Full 6x6 left Jacobian of exp, as four 3x3 blocks acting on (omega, v):
/// eps_omega = J * d_omega;  eps_v = Q * d_omega + J * d_v.
pub struct Se3LeftJacobian<T: Scalar> {
    pub j: Matrix3<T>,
    pub q: Matrix3<T>,
}

pub fn se3_left_jacobian<T: Scalar>(xi: &Twist<T>) -> Se3LeftJacobian<T> {
    Se3LeftJacobian {
        j: so3_left_jacobian(&xi.omega),
        q: se3_q_block(&xi.v, &xi.omega),
    }
}

impl<T: Scalar> Se3LeftJacobian<T> {
    /// Pull a gradient w.r.t. the left perturbation (eps_omega, eps_v) back to
    /// a gradient w.r.t. the twist (omega, v): transpose of the block matrix.
    pub fn transpose_apply(&self, g_eps: &Twist<T>) -> Twist<T> {
        Twist {
            omega: self.j.transpose() * g_eps.omega + self.q.transpose() * g_eps.v,
            v: self.j.transpose() * g_eps.v,
        }
    }
}

// ---------------------------------------------------------------------------
// Quaternion helpers (I/O-boundary rotation parameterization, (w, x, y, z)).
// ---------------------------------------------------------------------------

/// Rotation matrix of a unit quaternion (w, x, y, z).
pub fn quat_to_matrix<T: Scalar>(q: &Vector4<T>) -> Matrix3<T> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let two = real::<T>(2.0);
    Matrix3::new(
        T::one() - two * (y * y + z * z),
        two * (x * y - w * z),
        two * (x * z + w * y),
        two * (x * y + w * z),
        T::one() - two * (x * x + z * z),
        two * (y * z - w * x),
        two * (x * z - w * y),
        two * (y * z + w * x),
        T::one() - two * (x * x + y * y),
    )
}

/// Quaternion (w, x, y, z) of a rotation matrix, Shepperd's method.
pub fn matrix_to_quat<T: Scalar>(r: &Matrix3<T>) -> Vector4<T> {
    let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
    let quarter = real::<T>(0.25);
    let mut q;
    if trace > T::zero() {
        let s = (trace + T::one()).sqrt() * real(2.0);
        q = Vector4::new(
            quarter * s,
            (r[(2, 1)] - r[(1, 2)]) / s,
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(1, 0)] - r[(0, 1)]) / s,
        );
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (T::one() + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * real(2.0);
        q = Vector4::new(
            (r[(2, 1)] - r[(1, 2)]) / s,
            quarter * s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
        );
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (T::one() + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * real(2.0);
        q = Vector4::new(
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            quarter * s,
            (r[(1, 2)] + r[(2, 1)]) / s,
        );
    } else {
        let s = (T::one() + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * real(2.0);
        q = Vector4::new(
            (r[(1, 0)] - r[(0, 1)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
            (r[(1, 2)] + r[(2, 1)]) / s,
            quarter * s,
        );
    }
    // Canonical sign: w >= 0.
    if q[0] < T::zero() {
        q = -q;
    }
    q / q.norm()
}

/// Hamilton product of two (w, x, y, z) quaternions.
pub fn quat_mul<T: Scalar>(a: &Vector4<T>, b: &Vector4<T>) -> Vector4<T> {
    Vector4::new(
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    )
}

/// Partial derivatives of quat_to_matrix w.r.t. each unit-quaternion component.
pub fn quat_to_matrix_partials<T: Scalar>(q: &Vector4<T>) -> [Matrix3<T>; 4] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let two = real::<T>(2.0);
    let zero = T::zero();
    let dw = Matrix3::new(zero, -two * z, two * y, two * z, zero, -two * x, -two * y, two * x, zero);
    let dx = Matrix3::new(
        zero,
        two * y,
        two * z,
        two * y,
        -two * two * x,
        -two * w,
        two * z,
        two * w,
        -two * two * x,
    );
    let dy = Matrix3::new(
        -two * two * y,
        two * x,
        two * w,
        two * x,
        zero,
        two * z,
        -two * w,
        two * z,
        -two * two * y,
    );
    let dz = Matrix3::new(
        -two * two * z,
        -two * w,
        two * x,
        two * w,
        -two * two * z,
        two * y,
        two * x,
        two * y,
        zero,
    );
    [dw, dx, dy, dz]
}
