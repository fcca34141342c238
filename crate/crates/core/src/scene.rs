//! Persistent canonical Gaussian cloud and the hybrid motion model.
//!
//! Every dynamic Gaussian carries one coefficient row per frame; its rigid
//! transform at frame t is exp of the coefficient-weighted sum of the shared
//! motion bases (six frozen generators followed by the trainable bases).
//! Scale, opacity and color never change over time.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::{Matrix3, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::num::{real, Scalar};
use crate::se3::{
    self, quat_to_matrix, quat_to_matrix_partials, FixedGeneratorSet, RigidTransform, Twist,
};

/// One canonical Gaussian. The quaternion is stored raw (w, x, y, z) and
/// normalized on use; scales are stored as logs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian<T: Scalar> {
    pub mean: Vector3<T>,
    pub rot: Vector4<T>,
    pub log_scale: Vector3<T>,
    pub opacity_logit: T,
    pub color: Vector3<T>,
}

impl<T: Scalar> Gaussian<T> {
    pub fn rotation_matrix(&self) -> Matrix3<T> {
        quat_to_matrix(&(self.rot / self.rot.norm()))
    }

    pub fn opacity(&self) -> T {
        sigmoid(self.opacity_logit)
    }

    pub fn scale(&self) -> Vector3<T> {
        self.log_scale.map(|s| s.exp())
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.scale();
        for k in 0..3 {
            let v = s[k].to_f64().unwrap_or(f64::NAN);
            if !(1e-6..1e3).contains(&v) {
                return Err(Error::Validation(format!(
                    "gaussian scale {v} outside (1e-6, 1e3)"
                )));
            }
        }
        if (self.rot.norm() - T::one()).abs() > real(1e-6) {
            return Err(Error::Validation("gaussian quaternion is not unit-norm".into()));
        }
        for k in 0..3 {
            let c = self.color[k];
            if c < T::zero() || c > T::one() {
                return Err(Error::Validation("gaussian color outside [0,1]".into()));
            }
        }
        Ok(())
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn logit<T: Scalar>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

/// Canonical cloud plus the static/dynamic partition.
#[derive(Clone, Debug)]
pub struct GaussianCloud<T: Scalar> {
    pub gaussians: Vec<Gaussian<T>>,
    pub dynamic_mask: Vec<bool>,
}

impl<T: Scalar> GaussianCloud<T> {
    pub fn new(gaussians: Vec<Gaussian<T>>, dynamic_mask: Vec<bool>) -> Result<Self> {
        if gaussians.is_empty() {
            return Err(Error::InvalidArgument("cloud needs at least one gaussian".into()));
        }
        if gaussians.len() != dynamic_mask.len() {
            return Err(Error::InvalidArgument(
                "dynamic mask length differs from gaussian count".into(),
            ));
        }
        Ok(GaussianCloud {
            gaussians,
            dynamic_mask,
        })
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn n_dynamic(&self) -> usize {
        self.dynamic_mask.iter().filter(|&&d| d).count()
    }

    /// For each gaussian, its ordinal among the dynamic ones (None if static).
    pub fn dynamic_ordinals(&self) -> Vec<Option<usize>> {
        let mut next = 0usize;
        self.dynamic_mask
            .iter()
            .map(|&d| {
                if d {
                    let o = next;
                    next += 1;
                    Some(o)
                } else {
                    None
                }
            })
            .collect()
    }

    /// Diagonal of the axis-aligned bounding box of the canonical means.
    pub fn extent(&self) -> T {
        let mut lo = self.gaussians[0].mean;
        let mut hi = lo;
        for g in &self.gaussians {
            for k in 0..3 {
                lo[k] = lo[k].min(g.mean[k]);
                hi[k] = hi[k].max(g.mean[k]);
            }
        }
        (hi - lo).norm()
    }
}

/// Coefficient tensor of shape n_dyn x frames x basis_count, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CoeffTensor<T: Scalar> {
    pub n: usize,
    pub frames: usize,
    pub basis_count: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> CoeffTensor<T> {
    pub fn zeros(n: usize, frames: usize, basis_count: usize) -> Self {
        CoeffTensor {
            n,
            frames,
            basis_count,
            data: vec![T::zero(); n * frames * basis_count],
        }
    }

    #[inline]
    pub fn row(&self, i: usize, t: usize) -> &[T] {
        let o = (i * self.frames + t) * self.basis_count;
        &self.data[o..o + self.basis_count]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize, t: usize) -> &mut [T] {
        let o = (i * self.frames + t) * self.basis_count;
        &mut self.data[o..o + self.basis_count]
    }
}

/// Hybrid motion model: six frozen generators, trainable bases, coefficients.
#[derive(Clone, Debug)]
pub struct MotionModel<T: Scalar> {
    fixed: FixedGeneratorSet<T>,
    pub trainable: Vec<Twist<T>>,
    pub coeffs: CoeffTensor<T>,
    pub canonical_frame: usize,
}

impl<T: Scalar> MotionModel<T> {
    /// Zero coefficients, zero trainable rotation parts, trainable translation
    /// parts drawn from N(0, 0.01^2).
    pub fn new(
        n_dyn: usize,
        frames: usize,
        basis_count: usize,
        canonical_frame: usize,
        seed: u64,
    ) -> Result<Self> {
        if basis_count < 6 {
            return Err(Error::InvalidArgument("basis count must be >= 6".into()));
        }
        if frames == 0 || canonical_frame >= frames {
            return Err(Error::OutOfRange {
                what: "canonical frame",
                index: canonical_frame,
                len: frames,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trainable = (0..basis_count - 6)
            .map(|_| {
                let v = Vector3::new(
                    real::<T>(rng.sample::<f64, _>(rand_distr::StandardNormal) * 0.01),
                    real::<T>(rng.sample::<f64, _>(rand_distr::StandardNormal) * 0.01),
                    real::<T>(rng.sample::<f64, _>(rand_distr::StandardNormal) * 0.01),
                );
                Twist::new(Vector3::zeros(), v)
            })
            .collect();
        Ok(MotionModel {
            fixed: FixedGeneratorSet::standard(),
            trainable,
            coeffs: CoeffTensor::zeros(n_dyn, frames, basis_count),
            canonical_frame,
        })
    }

    pub fn basis_count(&self) -> usize {
        6 + self.trainable.len()
    }

    pub fn frames(&self) -> usize {
        self.coeffs.frames
    }

    pub fn fixed(&self) -> &FixedGeneratorSet<T> {
        &self.fixed
    }

    pub fn basis(&self, b: usize) -> &Twist<T> {
        if b < 6 {
            self.fixed.get(b)
        } else {
            &self.trainable[b - 6]
        }
    }

    /// Coefficient-weighted sum of the bases as a twist.
    pub fn twist_of_row(&self, coeff_row: &[T]) -> Twist<T> {
        let mut omega = Vector3::zeros();
        let mut v = Vector3::zeros();
        for (b, &c) in coeff_row.iter().enumerate() {
            let basis = self.basis(b);
            omega += basis.omega * c;
            v += basis.v * c;
        }
        Twist::new(omega, v)
    }

    /// Hash over the bit patterns of the fixed generators; used to assert the
    /// frozen bases never move.
    pub fn fixed_digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for g in self.fixed.as_slice() {
            for x in g.to_array() {
                x.to_f64().unwrap().to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

/// exp of the coefficient-weighted basis sum.
pub fn compose_motion<T: Scalar>(coeff_row: &[T], model: &MotionModel<T>) -> Result<RigidTransform<T>> {
    if coeff_row.len() != model.basis_count() {
        return Err(Error::InvalidArgument(format!(
            "coefficient row has {} entries, expected {}",
            coeff_row.len(),
            model.basis_count()
        )));
    }
    if coeff_row.iter().any(|c| !c.is_finite_scalar()) {
        return Err(Error::InvalidArgument("non-finite motion coefficient".into()));
    }
    se3::exp(&model.twist_of_row(coeff_row))
}

/// World-space state of every gaussian at one frame. Derived data only.
#[derive(Clone, Debug)]
pub struct PosedCloud<T: Scalar> {
    pub means: Vec<Vector3<T>>,
    pub rotations: Vec<Matrix3<T>>,
    pub log_scales: Vec<Vector3<T>>,
    pub opacity_logits: Vec<T>,
    pub colors: Vec<Vector3<T>>,
    pub frame: usize,
}

impl<T: Scalar> PosedCloud<T> {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }
}

/// Move the cloud to frame t: dynamic gaussians get T = exp(sum c b) applied
/// to mean and orientation, static ones are copied unchanged.
pub fn pose_at_time<T: Scalar>(
    cloud: &GaussianCloud<T>,
    model: &MotionModel<T>,
    t: usize,
) -> Result<PosedCloud<T>> {
    if t >= model.frames() {
        return Err(Error::OutOfRange {
            what: "frame",
            index: t,
            len: model.frames(),
        });
    }
    let n = cloud.len();
    let ordinals = cloud.dynamic_ordinals();
    let mut means = Vec::with_capacity(n);
    let mut rotations = Vec::with_capacity(n);
    for (i, g) in cloud.gaussians.iter().enumerate() {
        let r0 = g.rotation_matrix();
        match ordinals[i] {
            Some(d) => {
                let tf = compose_motion(model.coeffs.row(d, t), model)?;
                means.push(tf.rotation * g.mean + tf.translation);
                rotations.push(tf.rotation * r0);
            }
            None => {
                means.push(g.mean);
                rotations.push(r0);
            }
        }
    }
    Ok(PosedCloud {
        means,
        rotations,
        log_scales: cloud.gaussians.iter().map(|g| g.log_scale).collect(),
        opacity_logits: cloud.gaussians.iter().map(|g| g.opacity_logit).collect(),
        colors: cloud.gaussians.iter().map(|g| g.color).collect(),
        frame: t,
    })
}

/// World trajectory of one dynamic gaussian over every frame.
pub fn track_gaussian<T: Scalar>(
    index: usize,
    model: &MotionModel<T>,
    cloud: &GaussianCloud<T>,
) -> Result<Vec<Vector3<T>>> {
    if index >= cloud.len() {
        return Err(Error::OutOfRange {
            what: "gaussian",
            index,
            len: cloud.len(),
        });
    }
    let ordinal = cloud.dynamic_ordinals()[index].ok_or_else(|| {
        Error::InvalidArgument(format!(
            "gaussian {index} is static; its trajectory is constant"
        ))
    })?;
    let g = &cloud.gaussians[index];
    let mut out = Vec::with_capacity(model.frames());
    for t in 0..model.frames() {
        let tf = compose_motion(model.coeffs.row(ordinal, t), model)?;
        out.push(tf.rotation * g.mean + tf.translation);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Downsampling and density control
// ---------------------------------------------------------------------------

pub struct DownsampleOutcome<T: Scalar> {
    pub cloud: GaussianCloud<T>,
    pub model: MotionModel<T>,
    /// For each surviving gaussian, its index in the old cloud.
    pub kept: Vec<usize>,
}

/// Keep ceil(n_dyn * factor) dynamic gaussians by seeded uniform choice;
/// static gaussians and coefficient-row correspondence are untouched.
pub fn downsample<T: Scalar>(
    cloud: &GaussianCloud<T>,
    model: &MotionModel<T>,
    factor: f64,
    seed: u64,
) -> Result<DownsampleOutcome<T>> {
    if !(0.0 < factor && factor <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "downsample factor {factor} outside (0, 1]"
        )));
    }
    let ordinals = cloud.dynamic_ordinals();
    let n_dyn = cloud.n_dynamic();
    let keep_dyn = (n_dyn as f64 * factor).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = rand::seq::index::sample(&mut rng, n_dyn, keep_dyn).into_vec();
    chosen.sort_unstable();
    let keep_dyn_set: Vec<bool> = {
        let mut v = vec![false; n_dyn];
        for &c in &chosen {
            v[c] = true;
        }
        v
    };

    let mut gaussians = Vec::new();
    let mut mask = Vec::new();
    let mut kept = Vec::new();
    let mut old_rows = Vec::new();
    for (i, g) in cloud.gaussians.iter().enumerate() {
        match ordinals[i] {
            Some(d) if !keep_dyn_set[d] => continue,
            Some(d) => {
                old_rows.push(d);
                gaussians.push(*g);
                mask.push(true);
                kept.push(i);
            }
            None => {
                gaussians.push(*g);
                mask.push(false);
                kept.push(i);
            }
        }
    }

    let mut coeffs = CoeffTensor::zeros(old_rows.len(), model.frames(), model.basis_count());
    for (new_row, &old_row) in old_rows.iter().enumerate() {
        for t in 0..model.frames() {
            coeffs
                .row_mut(new_row, t)
                .copy_from_slice(model.coeffs.row(old_row, t));
        }
    }
    let model = MotionModel {
        fixed: model.fixed.clone(),
        trainable: model.trainable.clone(),
        coeffs,
        canonical_frame: model.canonical_frame,
    };
    Ok(DownsampleOutcome {
        cloud: GaussianCloud::new(gaussians, mask)?,
        model,
        kept,
    })
}

/// Per-gaussian gradient statistics driving density control.
#[derive(Clone, Debug)]
pub struct DensifyGrads<T: Scalar> {
    /// Mean screen-space (NDC) positional gradient norm since the last call.
    pub ndc_norm: Vec<T>,
    /// Mean world-space positional gradient; only its direction is used.
    pub world_dir: Vec<Vector3<T>>,
}

#[derive(Clone, Debug)]
pub struct DensifyOptions<T: Scalar> {
    pub grad_threshold: T,
    pub size_threshold_frac: T,
    pub prune_opacity: T,
    pub clone_nudge: T,
    pub split_scale_shrink: T,
    pub seed: u64,
}

impl<T: Scalar> Default for DensifyOptions<T> {
    fn default() -> Self {
        DensifyOptions {
            grad_threshold: real(2e-4),
            size_threshold_frac: real(0.01),
            prune_opacity: real(5e-3),
            clone_nudge: real(0.01),
            split_scale_shrink: real(1.6),
            seed: 0,
        }
    }
}

pub struct DensifyOutcome<T: Scalar> {
    pub cloud: GaussianCloud<T>,
    pub model: MotionModel<T>,
    /// For each gaussian in the new cloud, its parent index in the old cloud.
    pub parent_of: Vec<usize>,
    pub pruned: usize,
    pub cloned: usize,
    pub split: usize,
}

/// 3D-GS style adaptive density control: prune transparent gaussians, clone
/// small high-gradient ones (nudged along the gradient), split large ones
/// into two children sampled inside the parent footprint. Children copy the
/// parent's coefficient rows.
pub fn densify_and_prune<T: Scalar>(
    cloud: &GaussianCloud<T>,
    model: &MotionModel<T>,
    grads: &DensifyGrads<T>,
    opts: &DensifyOptions<T>,
) -> Result<DensifyOutcome<T>> {
    if grads.ndc_norm.len() != cloud.len() || grads.world_dir.len() != cloud.len() {
        return Err(Error::Contract(
            "densify gradients are not aligned with the cloud".into(),
        ));
    }
    let ordinals = cloud.dynamic_ordinals();
    let size_threshold = opts.size_threshold_frac * cloud.extent();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut gaussians = Vec::with_capacity(cloud.len());
    let mut mask = Vec::with_capacity(cloud.len());
    let mut parent_of = Vec::with_capacity(cloud.len());
    let mut new_rows: Vec<usize> = Vec::new(); // old dynamic row per new dynamic gaussian
    let (mut pruned, mut cloned, mut split) = (0usize, 0usize, 0usize);

    let push = |g: Gaussian<T>,
                    dynamic: bool,
                    parent: usize,
                    row: Option<usize>,
                    gaussians: &mut Vec<Gaussian<T>>,
                    mask: &mut Vec<bool>,
                    parent_of: &mut Vec<usize>,
                    new_rows: &mut Vec<usize>| {
        gaussians.push(g);
        mask.push(dynamic);
        parent_of.push(parent);
        if let Some(r) = row {
            new_rows.push(r);
        }
    };

    for (i, g) in cloud.gaussians.iter().enumerate() {
        if g.opacity() < opts.prune_opacity {
            pruned += 1;
            continue;
        }
        let dynamic = ordinals[i].is_some();
        let high_grad = grads.ndc_norm[i] > opts.grad_threshold;
        let scale = g.scale();
        let max_scale = scale.x.max(scale.y).max(scale.z);

        if high_grad && max_scale > size_threshold {
            // Split: parent removed, two children inside its footprint.
            let shrink = opts.split_scale_shrink.ln();
            let r0 = g.rotation_matrix();
            for _ in 0..2 {
                let local = Vector3::new(
                    real::<T>(rng.sample::<f64, _>(rand_distr::StandardNormal)) * scale.x,
                    real::<T>(rng.sample::<f64, _>(rand_distr::StandardNormal)) * scale.y,
                    real::<T>(rng.sample::<f64, _>(rand_distr::StandardNormal)) * scale.z,
                );
                let mut child = *g;
                child.mean = g.mean + r0 * local;
                child.log_scale = g.log_scale.map(|s| s - shrink);
                push(
                    child,
                    dynamic,
                    i,
                    ordinals[i],
                    &mut gaussians,
                    &mut mask,
                    &mut parent_of,
                    &mut new_rows,
                );
            }
            split += 1;
        } else if high_grad {
            // Clone: keep the parent, add a nudged copy.
            push(
                *g,
                dynamic,
                i,
                ordinals[i],
                &mut gaussians,
                &mut mask,
                &mut parent_of,
                &mut new_rows,
            );
            let dir = grads.world_dir[i];
            let dir = if dir.norm() > real(1e-12) {
                dir.normalize()
            } else {
                Vector3::new(T::one(), T::zero(), T::zero())
            };
            let mut child = *g;
            child.mean = g.mean + dir.component_mul(&scale) * opts.clone_nudge;
            push(
                child,
                dynamic,
                i,
                ordinals[i],
                &mut gaussians,
                &mut mask,
                &mut parent_of,
                &mut new_rows,
            );
            cloned += 1;
        } else {
            push(
                *g,
                dynamic,
                i,
                ordinals[i],
                &mut gaussians,
                &mut mask,
                &mut parent_of,
                &mut new_rows,
            );
        }
    }

    let mut coeffs = CoeffTensor::zeros(new_rows.len(), model.frames(), model.basis_count());
    for (new_row, &old_row) in new_rows.iter().enumerate() {
        for t in 0..model.frames() {
            coeffs
                .row_mut(new_row, t)
                .copy_from_slice(model.coeffs.row(old_row, t));
        }
    }
    let model = MotionModel {
        fixed: model.fixed.clone(),
        trainable: model.trainable.clone(),
        coeffs,
        canonical_frame: model.canonical_frame,
    };
    Ok(DensifyOutcome {
        cloud: GaussianCloud::new(gaussians, mask)?,
        model,
        parent_of,
        pruned,
        cloned,
        split,
    })
}

// ---------------------------------------------------------------------------
// Backward pass through Eq.-style pose evolution
// ---------------------------------------------------------------------------

/// Gradients w.r.t. the posed (world, frame-t) state, as produced by the
/// rasterizer and the track loss.
#[derive(Clone, Debug)]
pub struct PosedGrads<T: Scalar> {
    pub d_mean: Vec<Vector3<T>>,
    /// Gradient w.r.t. the entries of the posed rotation matrix.
    pub d_rotation: Vec<Matrix3<T>>,
    pub d_log_scale: Vec<Vector3<T>>,
    pub d_opacity_logit: Vec<T>,
    pub d_color: Vec<Vector3<T>>,
    /// Screen-space (NDC) positional gradient accumulated per gaussian.
    pub d_mean2d_ndc: Vec<nalgebra::Vector2<T>>,
}

impl<T: Scalar> PosedGrads<T> {
    pub fn zeros(n: usize) -> Self {
        PosedGrads {
            d_mean: vec![Vector3::zeros(); n],
            d_rotation: vec![Matrix3::zeros(); n],
            d_log_scale: vec![Vector3::zeros(); n],
            d_opacity_logit: vec![T::zero(); n],
            d_color: vec![Vector3::zeros(); n],
            d_mean2d_ndc: vec![nalgebra::Vector2::zeros(); n],
        }
    }
}

/// Gradients w.r.t. canonical parameters and the motion model at one frame.
#[derive(Clone, Debug)]
pub struct CanonicalGrads<T: Scalar> {
    pub d_mean: Vec<Vector3<T>>,
    pub d_rot: Vec<Vector4<T>>,
    pub d_log_scale: Vec<Vector3<T>>,
    pub d_opacity_logit: Vec<T>,
    pub d_color: Vec<Vector3<T>>,
    /// n_dyn x basis_count gradient for the frame that was rendered.
    pub d_coeffs_frame: Vec<T>,
    pub d_trainable: Vec<Twist<T>>,
}

/// Chain posed-state gradients back through mu_t = R mu0 + t, R_t = R R0 and
/// the exponential map (left-Jacobian differential) into canonical means,
/// quaternions, motion coefficients and trainable bases.
pub fn backward_pose_at_time<T: Scalar>(
    cloud: &GaussianCloud<T>,
    model: &MotionModel<T>,
    t: usize,
    posed: &PosedGrads<T>,
) -> Result<CanonicalGrads<T>> {
    let n = cloud.len();
    if posed.d_mean.len() != n {
        return Err(Error::Contract(
            "posed gradients are not aligned with the cloud".into(),
        ));
    }
    let ordinals = cloud.dynamic_ordinals();
    let b_count = model.basis_count();
    let mut out = CanonicalGrads {
        d_mean: vec![Vector3::zeros(); n],
        d_rot: vec![Vector4::zeros(); n],
        d_log_scale: posed.d_log_scale.clone(),
        d_opacity_logit: posed.d_opacity_logit.clone(),
        d_color: posed.d_color.clone(),
        d_coeffs_frame: vec![T::zero(); cloud.n_dynamic() * b_count],
        d_trainable: vec![Twist::zero(); model.trainable.len()],
    };

    for (i, g) in cloud.gaussians.iter().enumerate() {
        let g_mean = posed.d_mean[i];
        let g_rotmat = posed.d_rotation[i];
        let r0 = g.rotation_matrix();

        let d_r0: Matrix3<T>;
        match ordinals[i] {
            None => {
                out.d_mean[i] = g_mean;
                d_r0 = g_rotmat;
            }
            Some(d) => {
                let row = model.coeffs.row(d, t);
                let xi = model.twist_of_row(row);
                let tf = se3::exp_unchecked(&xi);
                let y = tf.rotation * g.mean + tf.translation;
                let r_t = tf.rotation * r0;

                // Canonical parameter pullbacks.
                out.d_mean[i] = tf.rotation.transpose() * g_mean;
                d_r0 = tf.rotation.transpose() * g_rotmat;

                // Gradient w.r.t. the left perturbation eps of exp(xi).
                // Point action y' = y + eps_omega x y + eps_v gives
                // dL/d eps_v = g_mean and dL/d eps_omega = y x g_mean.
                let mut grad_eps = Twist::new(y.cross(&g_mean), g_mean);

                // Rotation composition R_t' = (I + [eps_omega]) R_t gives
                // dL/d eps_omega_k = <G R_t^T, E_k>.
                let a = g_rotmat * r_t.transpose();
                grad_eps.omega += Vector3::new(
                    a[(2, 1)] - a[(1, 2)],
                    a[(0, 2)] - a[(2, 0)],
                    a[(1, 0)] - a[(0, 1)],
                );

                // Pull back through the exponential differential.
                let jac = se3::se3_left_jacobian(&xi);
                let d_xi = jac.transpose_apply(&grad_eps);

                // Distribute onto coefficients and trainable bases.
                let coeff_out = &mut out.d_coeffs_frame[d * b_count..(d + 1) * b_count];
                for b in 0..b_count {
                    coeff_out[b] += model.basis(b).dot(&d_xi);
                }
                for (j, tw) in out.d_trainable.iter_mut().enumerate() {
                    let c = row[6 + j];
                    tw.omega += d_xi.omega * c;
                    tw.v += d_xi.v * c;
                }
            }
        }

        // Quaternion pullback with normalization Jacobian.
        let qn = g.rot / g.rot.norm();
        let parts = quat_to_matrix_partials(&qn);
        let mut d_qn = Vector4::zeros();
        for k in 0..4 {
            d_qn[k] = d_r0.component_mul(&parts[k]).sum();
        }
        let norm = g.rot.norm();
        out.d_rot[i] = (d_qn - qn * qn.dot(&d_qn)) / norm;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix4;
    use rand::Rng;

    type T = f64;

    fn unit_cloud(n: usize, dynamic: bool) -> GaussianCloud<T> {
        let gaussians = (0..n)
            .map(|i| Gaussian {
                mean: Vector3::new(i as f64 * 0.3, 0.1, 2.0),
                rot: Vector4::new(1.0, 0.0, 0.0, 0.0),
                log_scale: Vector3::new(-2.0, -2.0, -2.0),
                opacity_logit: 0.5,
                color: Vector3::new(0.5, 0.4, 0.3),
            })
            .collect();
        GaussianCloud::new(gaussians, vec![dynamic; n]).unwrap()
    }

    fn exp_series_oracle(xi: &Twist<T>) -> Matrix4<f64> {
        let a = xi.hat();
        let mut term = Matrix4::<f64>::identity();
        let mut sum = Matrix4::<f64>::identity();
        for k in 1..=30 {
            term = term * a / (k as f64);
            sum += term;
        }
        sum
    }

    #[test]
    fn one_hot_fixed_coefficients() {
        let model = MotionModel::<T>::new(1, 2, 8, 0, 0).unwrap();
        let mut row = vec![0.0; 8];
        row[0] = 0.7;
        let tf = compose_motion(&row, &model).unwrap();
        assert!((tf.translation - Vector3::new(0.7, 0.0, 0.0)).norm() < 1e-15);
        assert!((tf.rotation - Matrix3::identity()).abs().max() < 1e-15);

        let zero = vec![0.0; 8];
        let tf = compose_motion(&zero, &model).unwrap();
        assert!((tf.to_homogeneous() - Matrix4::identity()).abs().max() < 1e-15);

        let mut row = vec![0.0; 8];
        row[5] = std::f64::consts::PI;
        let tf = compose_motion(&row, &model).unwrap();
        let want = Matrix3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);
        assert!((tf.rotation - want).abs().max() < 1e-12);
    }

    #[test]
    fn compose_motion_matches_series_oracle_b15() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let model = MotionModel::<T>::new(1, 2, 15, 0, 5).unwrap();
        for _ in 0..100 {
            let row: Vec<f64> = (0..15).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let got = compose_motion(&row, &model).unwrap().to_homogeneous();
            let want = exp_series_oracle(&model.twist_of_row(&row));
            assert!((got - want).abs().max() < 1e-8);
        }
    }

    #[test]
    fn compose_motion_rejects_bad_rows() {
        let model = MotionModel::<T>::new(1, 2, 8, 0, 0).unwrap();
        assert!(compose_motion(&[0.0; 7], &model).is_err());
        let mut row = vec![0.0; 8];
        row[3] = f64::NAN;
        assert!(compose_motion(&row, &model).is_err());
    }

    #[test]
    fn canonical_frame_is_identity() {
        let cloud = unit_cloud(4, true);
        let model = MotionModel::<T>::new(4, 5, 8, 2, 0).unwrap();
        let posed = pose_at_time(&cloud, &model, 2).unwrap();
        for (i, g) in cloud.gaussians.iter().enumerate() {
            assert_eq!(posed.means[i], g.mean);
            assert_eq!(posed.rotations[i], g.rotation_matrix());
            assert_eq!(posed.log_scales[i], g.log_scale);
            assert_eq!(posed.opacity_logits[i], g.opacity_logit);
            assert_eq!(posed.colors[i], g.color);
        }
    }

    #[test]
    fn one_hot_tz_shifts_mean() {
        let cloud = unit_cloud(1, true);
        let mut model = MotionModel::<T>::new(1, 2, 8, 0, 0).unwrap();
        model.coeffs.row_mut(0, 1)[2] = 2.0;
        let posed = pose_at_time(&cloud, &model, 1).unwrap();
        assert!((posed.means[0] - (cloud.gaussians[0].mean + Vector3::new(0.0, 0.0, 2.0))).norm() < 1e-15);
        assert_eq!(posed.rotations[0], cloud.gaussians[0].rotation_matrix());
    }

    #[test]
    fn rotation_only_transform_matches_quaternion_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut cloud = unit_cloud(1, true);
        // Random canonical orientation.
        let q = {
            let v = Vector4::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            v / v.norm()
        };
        cloud.gaussians[0].rot = q;
        let mut model = MotionModel::<T>::new(1, 2, 8, 0, 0).unwrap();
        let angle = 0.8;
        model.coeffs.row_mut(0, 1)[4] = angle; // rotation about Y
        let posed = pose_at_time(&cloud, &model, 1).unwrap();
        // Norm preserved for a pure rotation about the origin.
        assert!((posed.means[0].norm() - cloud.gaussians[0].mean.norm()).abs() < 1e-12);
        // R_t equals the quaternion product oracle.
        let half = angle / 2.0;
        let q_rot = Vector4::new(half.cos(), 0.0, half.sin(), 0.0);
        let q_t = se3::quat_mul(&q_rot, &(q / q.norm()));
        assert!((posed.rotations[0] - quat_to_matrix(&q_t)).abs().max() < 1e-12);
    }

    #[test]
    fn appearance_is_time_invariant() {
        let cloud = unit_cloud(3, true);
        let mut model = MotionModel::<T>::new(3, 6, 9, 3, 1).unwrap();
        for t in 0..6 {
            for i in 0..3 {
                for b in 0..9 {
                    model.coeffs.row_mut(i, t)[b] = ((i + t + b) as f64 * 0.721).sin() * 0.2;
                }
            }
        }
        let reference = pose_at_time(&cloud, &model, 0).unwrap();
        for t in 1..6 {
            let posed = pose_at_time(&cloud, &model, t).unwrap();
            assert_eq!(posed.log_scales, reference.log_scales);
            assert_eq!(posed.opacity_logits, reference.opacity_logits);
            assert_eq!(posed.colors, reference.colors);
        }
    }

    #[test]
    fn track_matches_per_frame_poses() {
        let cloud = unit_cloud(2, true);
        let mut model = MotionModel::<T>::new(2, 5, 8, 0, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for i in 0..2 {
            for t in 0..5 {
                for b in 0..8 {
                    model.coeffs.row_mut(i, t)[b] = rng.gen_range(-0.3..0.3);
                }
            }
        }
        let traj = track_gaussian(1, &model, &cloud).unwrap();
        for (t, p) in traj.iter().enumerate() {
            let posed = pose_at_time(&cloud, &model, t).unwrap();
            assert_eq!(*p, posed.means[1]);
        }
    }

    #[test]
    fn track_linear_ramp_on_tx() {
        let cloud = unit_cloud(1, true);
        let mut model = MotionModel::<T>::new(1, 6, 8, 0, 0).unwrap();
        for t in 0..6 {
            model.coeffs.row_mut(0, t)[0] = t as f64 * 0.1;
        }
        let traj = track_gaussian(0, &model, &cloud).unwrap();
        for (t, p) in traj.iter().enumerate() {
            assert!((p.x - (cloud.gaussians[0].mean.x + 0.1 * t as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn track_zero_coefficients_is_constant() {
        let cloud = unit_cloud(1, true);
        let model = MotionModel::<T>::new(1, 4, 8, 0, 0).unwrap();
        let traj = track_gaussian(0, &model, &cloud).unwrap();
        for p in traj {
            assert_eq!(p, cloud.gaussians[0].mean);
        }
    }

    #[test]
    fn track_static_index_is_error() {
        let cloud = unit_cloud(1, false);
        let model = MotionModel::<T>::new(0, 4, 8, 0, 0).unwrap();
        assert!(track_gaussian(0, &model, &cloud).is_err());
    }

    #[test]
    fn downsample_counts() {
        let cloud = unit_cloud(10, true);
        let model = MotionModel::<T>::new(10, 3, 8, 0, 0).unwrap();
        let out = downsample(&cloud, &model, 0.5, 7).unwrap();
        assert_eq!(out.cloud.n_dynamic(), 5);
        assert_eq!(out.model.coeffs.n, 5);

        let out = downsample(&cloud, &model, 1.0, 7).unwrap();
        assert_eq!(out.cloud.len(), 10);

        let cloud7 = unit_cloud(7, true);
        let model7 = MotionModel::<T>::new(7, 3, 8, 0, 0).unwrap();
        let out = downsample(&cloud7, &model7, 0.5, 7).unwrap();
        assert_eq!(out.cloud.n_dynamic(), 4); // ceiling
    }

    #[test]
    fn downsample_keeps_row_correspondence() {
        let cloud = unit_cloud(6, true);
        let mut model = MotionModel::<T>::new(6, 2, 8, 0, 0).unwrap();
        for i in 0..6 {
            model.coeffs.row_mut(i, 1)[0] = i as f64;
        }
        let out = downsample(&cloud, &model, 0.5, 3).unwrap();
        for (new_i, &old_i) in out.kept.iter().enumerate() {
            assert_eq!(out.model.coeffs.row(new_i, 1)[0], old_i as f64);
            assert_eq!(out.cloud.gaussians[new_i].mean, cloud.gaussians[old_i].mean);
        }
    }

    #[test]
    fn densify_no_gradient_leaves_cloud_unchanged() {
        let cloud = unit_cloud(3, true);
        let model = MotionModel::<T>::new(3, 2, 8, 0, 0).unwrap();
        let grads = DensifyGrads {
            ndc_norm: vec![0.0; 3],
            world_dir: vec![Vector3::zeros(); 3],
        };
        let out = densify_and_prune(&cloud, &model, &grads, &DensifyOptions::default()).unwrap();
        assert_eq!(out.cloud.len(), 3);
        assert_eq!(out.pruned + out.cloned + out.split, 0);
        for (a, b) in out.cloud.gaussians.iter().zip(cloud.gaussians.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn densify_prunes_transparent_gaussians() {
        let mut cloud = unit_cloud(3, true);
        cloud.gaussians[1].opacity_logit = logit(1e-4);
        let model = MotionModel::<T>::new(3, 2, 8, 0, 0).unwrap();
        let grads = DensifyGrads {
            ndc_norm: vec![0.0; 3],
            world_dir: vec![Vector3::zeros(); 3],
        };
        let out = densify_and_prune(&cloud, &model, &grads, &DensifyOptions::default()).unwrap();
        assert_eq!(out.cloud.len(), 2);
        assert_eq!(out.pruned, 1);
    }

    #[test]
    fn densify_splits_large_gaussian_into_two() {
        // Three gaussians; the middle one is huge and has a high gradient.
        let mut cloud = unit_cloud(3, true);
        cloud.gaussians[1].log_scale = Vector3::new(-0.5, -0.5, -0.5);
        let mut model = MotionModel::<T>::new(3, 2, 8, 0, 0).unwrap();
        model.coeffs.row_mut(1, 1)[0] = 0.25;
        let grads = DensifyGrads {
            ndc_norm: vec![0.0, 1.0, 0.0],
            world_dir: vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0), Vector3::zeros()],
        };
        let out = densify_and_prune(&cloud, &model, &grads, &DensifyOptions::default()).unwrap();
        assert_eq!(out.split, 1);
        assert_eq!(out.cloud.len(), 4); // parent removed, two children added
        // Children keep the parent coefficient rows.
        for (new_i, &parent) in out.parent_of.iter().enumerate() {
            if parent == 1 {
                assert_eq!(out.model.coeffs.row_of_global(&out.cloud, new_i, 1)[0], 0.25);
            }
        }
    }

    #[test]
    fn densify_clones_small_gaussian() {
        let mut cloud = unit_cloud(2, true);
        cloud.gaussians[0].log_scale = Vector3::new(-6.0, -6.0, -6.0);
        let model = MotionModel::<T>::new(2, 2, 8, 0, 0).unwrap();
        let grads = DensifyGrads {
            ndc_norm: vec![1.0, 0.0],
            world_dir: vec![Vector3::new(0.0, 1.0, 0.0), Vector3::zeros()],
        };
        let out = densify_and_prune(&cloud, &model, &grads, &DensifyOptions::default()).unwrap();
        assert_eq!(out.cloned, 1);
        assert_eq!(out.cloud.len(), 3);
        let nudge = (out.cloud.gaussians[1].mean - cloud.gaussians[0].mean).norm();
        let want = 0.01 * (-6.0f64).exp();
        assert!((nudge - want).abs() < 1e-12);
    }

    #[test]
    fn fixed_bases_are_bitwise_frozen() {
        let model = MotionModel::<T>::new(3, 4, 15, 0, 0).unwrap();
        let digest = model.fixed_digest();
        let mut m2 = model.clone();
        for i in 0..3 {
            for t in 0..4 {
                m2.coeffs.row_mut(i, t).iter_mut().for_each(|c| *c = 0.3);
            }
        }
        m2.trainable.iter_mut().for_each(|t| t.v.x = 99.0);
        assert_eq!(m2.fixed_digest(), digest);
    }

    #[test]
    fn compose_motion_is_linear_in_the_algebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let model = MotionModel::<T>::new(1, 2, 10, 0, 3).unwrap();
        for _ in 0..50 {
            let row: Vec<f64> = (0..10).map(|_| rng.gen_range(-0.4..0.4)).collect();
            let a = rng.gen_range(-2.0..2.0);
            let scaled: Vec<f64> = row.iter().map(|c| c * a).collect();
            let lhs = compose_motion(&scaled, &model).unwrap();
            let rhs = se3::exp(&model.twist_of_row(&row).scaled(a)).unwrap();
            assert!((lhs.to_homogeneous() - rhs.to_homogeneous()).abs().max() < 1e-12);
        }
    }
}

#[cfg(test)]
impl<T: Scalar> CoeffTensor<T> {
    /// Test helper: row of a global gaussian index via the cloud's ordinals.
    fn row_of_global(&self, cloud: &GaussianCloud<T>, global: usize, t: usize) -> &[T] {
        let d = cloud.dynamic_ordinals()[global].expect("dynamic gaussian");
        self.row(d, t)
    }
}
