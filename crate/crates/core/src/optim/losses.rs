//! Loss assembly: photometric L1 + SSIM, masked normalized-depth L1, soft
//! track reprojection, the fixed/trainable coefficient penalty, and temporal
//! smoothness. Every term reports its value and the gradient seeds the
//! backward passes need.

use nalgebra::{Vector2, Vector3};

use super::LossConfig;
use crate::camera::{Extrinsics, Intrinsics};
use crate::error::{Error, Result};
use crate::frame::{RgbFrame, ScalarFrame};
use crate::render::RenderTarget;
use crate::scene::{GaussianCloud, MotionModel, PosedCloud};
use crate::tracks::TrackSet;
use crate::{metrics, Real};

/// Queries supervise their K nearest canonical gaussians.
pub const TRACK_KNN: usize = 8;
/// Rendered depth counts as valid where accumulated alpha exceeds this.
pub const DEPTH_VALID_ALPHA: Real = 0.5;

/// Soft assignment of each track query to nearby dynamic gaussians, computed
/// in the canonical frame and refreshed whenever the cloud changes shape.
#[derive(Clone, Debug, Default)]
pub struct TrackAssignments {
    /// Per query: (gaussian index, normalized weight). Empty when unusable.
    pub per_query: Vec<Vec<(usize, Real)>>,
}

/// Lift each query to 3D at the canonical frame (via the depth map and the
/// shared camera) and attach it to its K nearest dynamic canonical gaussians,
/// weighted by inverse canonical distance. Loss assignment uses
/// [`TRACK_KNN`]; trajectory readout may average more neighbors.
pub fn assign_tracks_k(
    tracks: &TrackSet,
    canonical_depth: &ScalarFrame<Real>,
    k: &Intrinsics<Real>,
    canonical_pose: &Extrinsics<Real>,
    cloud: &GaussianCloud<Real>,
    canonical_frame: usize,
    knn: usize,
) -> TrackAssignments {
    let knn = knn.max(1);
    let mut per_query = Vec::with_capacity(tracks.n_queries());
    for q in 0..tracks.n_queries() {
        if !tracks.is_visible(q, canonical_frame) {
            per_query.push(Vec::new());
            continue;
        }
        let uv = tracks.position(q, canonical_frame);
        let (px, py) = (
            (uv.x.round() as i64).clamp(0, canonical_depth.width as i64 - 1) as u32,
            (uv.y.round() as i64).clamp(0, canonical_depth.height as i64 - 1) as u32,
        );
        let z = canonical_depth.at(px, py);
        if !(z.is_finite() && z > 0.0) {
            per_query.push(Vec::new());
            continue;
        }
        let point = crate::camera::unproject_pixel(uv.x, uv.y, z, k, canonical_pose);

        let mut candidates: Vec<(usize, Real)> = cloud
            .gaussians
            .iter()
            .enumerate()
            .zip(cloud.dynamic_mask.iter())
            .filter(|(_, &dynamic)| dynamic)
            .map(|((i, g), _)| (i, (g.mean - point).norm()))
            .collect();
        if candidates.is_empty() {
            per_query.push(Vec::new());
            continue;
        }
        candidates.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        candidates.truncate(knn);
        let mut weights: Vec<(usize, Real)> = candidates
            .iter()
            .map(|&(i, d)| (i, 1.0 / (d + 1e-6)))
            .collect();
        let sum: Real = weights.iter().map(|(_, w)| w).sum();
        for (_, w) in weights.iter_mut() {
            *w /= sum;
        }
        per_query.push(weights);
    }
    TrackAssignments { per_query }
}

/// Loss-side assignment with the default K.
pub fn assign_tracks(
    tracks: &TrackSet,
    canonical_depth: &ScalarFrame<Real>,
    k: &Intrinsics<Real>,
    canonical_pose: &Extrinsics<Real>,
    cloud: &GaussianCloud<Real>,
    canonical_frame: usize,
) -> TrackAssignments {
    assign_tracks_k(
        tracks,
        canonical_depth,
        k,
        canonical_pose,
        cloud,
        canonical_frame,
        TRACK_KNN,
    )
}

/// Neighborhood size for trajectory readout; wider than the loss assignment
/// to average per-gaussian motion noise.
pub const TRACK_READOUT_KNN: usize = 24;

/// World trajectory answered for a query pixel at the canonical frame: the
/// weighted mean trajectory of its assigned gaussians. Queries with no usable
/// assignment are skipped.
pub fn track_query_pixels(
    queries: &TrackSet,
    canonical_depth: &ScalarFrame<Real>,
    k: &Intrinsics<Real>,
    canonical_pose: &Extrinsics<Real>,
    cloud: &GaussianCloud<Real>,
    model: &MotionModel<Real>,
    knn: usize,
) -> crate::Result<Vec<(usize, Vec<Vector3<Real>>)>> {
    let assignments = assign_tracks_k(
        queries,
        canonical_depth,
        k,
        canonical_pose,
        cloud,
        model.canonical_frame,
        knn,
    );
    let ordinals = cloud.dynamic_ordinals();
    let mut out = Vec::new();
    for (q, assigned) in assignments.per_query.iter().enumerate() {
        if assigned.is_empty() {
            continue;
        }
        let mut traj = vec![Vector3::zeros(); model.frames()];
        for &(gi, w) in assigned {
            match ordinals[gi] {
                Some(row) => {
                    for (t, p) in traj.iter_mut().enumerate() {
                        let tf = crate::scene::compose_motion(model.coeffs.row(row, t), model)?;
                        *p += (tf.rotation * cloud.gaussians[gi].mean + tf.translation) * w;
                    }
                }
                None => {
                    for p in traj.iter_mut() {
                        *p += cloud.gaussians[gi].mean * w;
                    }
                }
            }
        }
        out.push((q, traj));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub rgb: Real,
    pub ssim: Real,
    pub depth: Real,
    pub track: Real,
    pub coeff: Real,
    pub smooth: Real,
}

impl LossTerms {
    pub fn total(&self) -> Real {
        self.rgb + self.ssim + self.depth + self.track + self.coeff + self.smooth
    }
}

pub struct LossInputs<'a> {
    pub rendered: &'a RenderTarget<Real>,
    pub target_rgb: &'a RgbFrame<Real>,
    pub target_depth: &'a ScalarFrame<Real>,
    pub frame: usize,
    pub tracks: &'a TrackSet,
    pub assignments: &'a TrackAssignments,
    pub posed: &'a PosedCloud<Real>,
    pub intrinsics: &'a Intrinsics<Real>,
    pub extrinsics: &'a Extrinsics<Real>,
    pub model: &'a MotionModel<Real>,
    /// Motion pre-fit restricts the loss to the depth and track terms.
    pub motion_only: bool,
}

#[derive(Debug)]
pub struct LossEval {
    pub terms: LossTerms,
    pub d_rgb: RgbFrame<Real>,
    pub d_depth: ScalarFrame<Real>,
    pub d_alpha: ScalarFrame<Real>,
    /// Extra posed-mean gradients from the track term: (gaussian index, grad).
    pub track_mean_grads: Vec<(usize, Vector3<Real>)>,
    /// Dense coefficient-tensor gradient from the penalty terms.
    pub d_coeffs: Vec<Real>,
}

fn ensure_finite(value: Real, term: &'static str) -> Result<Real> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteLoss { term })
    }
}

pub fn compute_loss(inputs: &LossInputs<'_>, cfg: &LossConfig) -> Result<LossEval> {
    let rendered = inputs.rendered;
    let (w, h) = (rendered.rgb.width, rendered.rgb.height);
    rendered.rgb.same_shape(inputs.target_rgb)?;
    if inputs.target_depth.width != w || inputs.target_depth.height != h {
        return Err(Error::InvalidArgument("depth target shape mismatch".into()));
    }

    let mut terms = LossTerms::default();
    let mut d_rgb = RgbFrame::new(w, h, Vector3::zeros());
    let mut d_depth = ScalarFrame::new(w, h, 0.0);
    let mut d_alpha = ScalarFrame::new(w, h, 0.0);
    let npix = (w * h) as Real;

    // Photometric L1 + SSIM.
    if !inputs.motion_only {
        if cfg.w_rgb > 0.0 {
            let mut total = 0.0;
            for (i, (r, t)) in rendered
                .rgb
                .pixels
                .iter()
                .zip(inputs.target_rgb.pixels.iter())
                .enumerate()
            {
                let diff = r - t;
                total += diff.abs().sum();
                d_rgb.pixels[i] += diff.map(|d| d.signum()) * (cfg.w_rgb / (npix * 3.0));
            }
            terms.rgb = ensure_finite(cfg.w_rgb * total / (npix * 3.0), "rgb")?;
        }
        if cfg.w_ssim > 0.0 {
            let (mssim, grad) = metrics::ssim_with_grad(&rendered.rgb, inputs.target_rgb)?;
            terms.ssim = ensure_finite(cfg.w_ssim * (1.0 - mssim), "ssim")?;
            for (d, g) in d_rgb.pixels.iter_mut().zip(grad.pixels.iter()) {
                *d -= g * cfg.w_ssim;
            }
        }
    }

    // Masked L1 on alpha-normalized depth.
    if cfg.w_depth > 0.0 {
        let mut masked: Vec<(usize, Real, Real)> = Vec::new(); // (pixel, alpha, normalized)
        for i in 0..(w * h) as usize {
            let a = rendered.alpha.values[i];
            let tgt = inputs.target_depth.values[i];
            if a > DEPTH_VALID_ALPHA && tgt.is_finite() && tgt > 0.0 {
                masked.push((i, a, rendered.depth.values[i] / a));
            }
        }
        if !masked.is_empty() {
            let count = masked.len() as Real;
            let mut total = 0.0;
            for &(i, a, nd) in &masked {
                let err = nd - inputs.target_depth.values[i];
                total += err.abs();
                let s = err.signum() * cfg.w_depth / count;
                d_depth.values[i] += s / a;
                d_alpha.values[i] -= s * rendered.depth.values[i] / (a * a);
            }
            terms.depth = ensure_finite(cfg.w_depth * total / count, "depth")?;
        }
    }

    // Soft-assigned track supervision: squared reprojected pixel error plus
    // the centroid's camera depth against the depth map at the track pixel,
    // scaled by fx/z so both parts live in pixel units. Without the depth
    // part the centroid is free to slide along the viewing ray; squared
    // errors keep straggler queries supplied with gradient.
    let mut track_mean_grads: Vec<(usize, Vector3<Real>)> = Vec::new();
    if cfg.w_track > 0.0 {
        struct Hit {
            centroid: Vector3<Real>,
            pixel_err: Vector2<Real>,
            z_err: Option<(Real, Real)>, // (error, px-per-unit scale)
            query: usize,
        }
        let mut hits: Vec<Hit> = Vec::new();
        let mut n_terms = 0usize;
        for q in 0..inputs.tracks.n_queries() {
            let assigned = &inputs.assignments.per_query[q];
            if assigned.is_empty() || !inputs.tracks.is_visible(q, inputs.frame) {
                continue;
            }
            let mut centroid = Vector3::zeros();
            for &(g, wgt) in assigned {
                centroid += inputs.posed.means[g] * wgt;
            }
            let cam = inputs.extrinsics.world_to_camera(&centroid);
            if cam.z <= crate::render::SPLAT_NEAR {
                continue;
            }
            let k = inputs.intrinsics;
            let track_uv = inputs.tracks.position(q, inputs.frame);
            let uv = Vector2::new(
                k.fx * cam.x / cam.z + k.cx,
                k.fy * cam.y / cam.z + k.cy,
            );
            let z_err = {
                let px = (track_uv.x.round() as i64)
                    .clamp(0, inputs.target_depth.width as i64 - 1) as u32;
                let py = (track_uv.y.round() as i64)
                    .clamp(0, inputs.target_depth.height as i64 - 1) as u32;
                let z_tgt = inputs.target_depth.at(px, py);
                (z_tgt.is_finite() && z_tgt > 0.0)
                    .then(|| (cam.z - z_tgt, k.fx / z_tgt))
            };
            n_terms += 2 + z_err.is_some() as usize;
            hits.push(Hit {
                centroid,
                pixel_err: uv - track_uv,
                z_err,
                query: q,
            });
        }
        if n_terms > 0 {
            let count = n_terms as Real;
            let mut total = 0.0;
            for hit in &hits {
                total += hit.pixel_err.norm_squared();
                let d_uv = hit.pixel_err * (2.0 * cfg.w_track / count);
                let cam = inputs.extrinsics.world_to_camera(&hit.centroid);
                let k = inputs.intrinsics;
                let (z, z2) = (cam.z, cam.z * cam.z);
                let j = nalgebra::Matrix2x3::new(
                    k.fx / z,
                    0.0,
                    -k.fx * cam.x / z2,
                    0.0,
                    k.fy / z,
                    -k.fy * cam.y / z2,
                );
                let mut d_cam = j.transpose() * d_uv;
                if let Some((z_err, scale)) = hit.z_err {
                    let scaled = z_err * scale;
                    total += scaled * scaled;
                    d_cam.z += scaled * scale * 2.0 * cfg.w_track / count;
                }
                let d_world = inputs.extrinsics.pose.rotation.transpose() * d_cam;
                for &(g, wgt) in &inputs.assignments.per_query[hit.query] {
                    track_mean_grads.push((g, d_world * wgt));
                }
            }
            terms.track = ensure_finite(cfg.w_track * total / count, "track")?;
        }
    }

    // Coefficient penalty and temporal smoothness over the full tensor.
    let coeffs = &inputs.model.coeffs;
    let mut d_coeffs = vec![0.0; coeffs.data.len()];
    if !inputs.motion_only {
        let b_count = inputs.model.basis_count();
        if cfg.w_coeff > 0.0 && coeffs.n > 0 {
            let norm = (coeffs.n * coeffs.frames) as Real;
            let mut total = 0.0;
            for i in 0..coeffs.n {
                for t in 0..coeffs.frames {
                    let row = coeffs.row(i, t);
                    let off = (i * coeffs.frames + t) * b_count;
                    for (b, &c) in row.iter().enumerate() {
                        let wgt = if b < 6 {
                            cfg.lambda_fixed
                        } else {
                            1.0 - cfg.lambda_fixed
                        };
                        total += wgt * c * c;
                        d_coeffs[off + b] += cfg.w_coeff * 2.0 * wgt * c / norm;
                    }
                }
            }
            terms.coeff = ensure_finite(cfg.w_coeff * total / norm, "coeff")?;
        }
        // Temporal smoothness: mean over frame pairs of the squared Frobenius
        // norm of the coefficient-slice difference. Summing over gaussians
        // keeps the per-coefficient restoring force independent of N; a
        // per-(N, F) mean would vanish against the render gradients.
        if cfg.w_smooth > 0.0 && coeffs.n > 0 && coeffs.frames > 1 {
            let norm = (coeffs.frames - 1) as Real;
            let mut total = 0.0;
            for i in 0..coeffs.n {
                for t in 0..coeffs.frames - 1 {
                    let off_a = (i * coeffs.frames + t) * b_count;
                    let off_b = off_a + b_count;
                    for b in 0..b_count {
                        let delta = coeffs.data[off_b + b] - coeffs.data[off_a + b];
                        total += delta * delta;
                        let g = cfg.w_smooth * 2.0 * delta / norm;
                        d_coeffs[off_b + b] += g;
                        d_coeffs[off_a + b] -= g;
                    }
                }
            }
            terms.smooth = ensure_finite(cfg.w_smooth * total / norm, "smooth")?;
        }
    }

    Ok(LossEval {
        terms,
        d_rgb,
        d_depth,
        d_alpha,
        track_mean_grads,
        d_coeffs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{render, RenderOptions};
    use crate::scene::{logit, pose_at_time, Gaussian};
    use nalgebra::Vector4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_setup() -> (
        GaussianCloud<Real>,
        MotionModel<Real>,
        Intrinsics<Real>,
        Extrinsics<Real>,
    ) {
        let gaussians = vec![Gaussian {
            mean: Vector3::new(0.0, 0.0, 2.0),
            rot: Vector4::new(1.0, 0.0, 0.0, 0.0),
            log_scale: Vector3::new(-1.5, -1.5, -1.5),
            opacity_logit: logit(0.9),
            color: Vector3::new(0.8, 0.2, 0.1),
        }];
        let cloud = GaussianCloud::new(gaussians, vec![true]).unwrap();
        let model = MotionModel::new(1, 2, 8, 0, 0).unwrap();
        let k = Intrinsics::new(30.0, 30.0, 12.0, 12.0, 24, 24).unwrap();
        (cloud, model, k, Extrinsics::identity())
    }

    #[test]
    fn perfect_render_and_zero_coefficients_give_zero_loss() {
        let (cloud, model, k, e) = toy_setup();
        let posed = pose_at_time(&cloud, &model, 0).unwrap();
        let rendered = render(&posed, &k, &e, Vector3::zeros(), &RenderOptions::default()).unwrap();
        let target_rgb = rendered.rgb.clone();
        let target_depth = rendered.normalized_depth(DEPTH_VALID_ALPHA);
        let tracks = TrackSet::new(0, 2);
        let assignments = TrackAssignments::default();
        let eval = compute_loss(
            &LossInputs {
                rendered: &rendered,
                target_rgb: &target_rgb,
                target_depth: &target_depth,
                frame: 0,
                tracks: &tracks,
                assignments: &assignments,
                posed: &posed,
                intrinsics: &k,
                extrinsics: &e,
                model: &model,
                motion_only: false,
            },
            &LossConfig::default(),
        )
        .unwrap();
        assert!(eval.terms.total().abs() < 1e-12, "{:?}", eval.terms);
    }

    #[test]
    fn coefficient_penalty_matches_hand_arithmetic() {
        // All six fixed coefficients at 1, trainable at 0, lambda 0.8:
        // per gaussian-frame penalty = 0.8 * 6 = 4.8.
        let (cloud, mut model, k, e) = toy_setup();
        for t in 0..2 {
            for b in 0..6 {
                model.coeffs.row_mut(0, t)[b] = 1.0;
            }
        }
        let posed = pose_at_time(&cloud, &model, 0).unwrap();
        let rendered = render(&posed, &k, &e, Vector3::zeros(), &RenderOptions::default()).unwrap();
        let cfg = LossConfig {
            w_rgb: 0.0,
            w_ssim: 0.0,
            w_depth: 0.0,
            w_track: 0.0,
            w_coeff: 1.0,
            lambda_fixed: 0.8,
            w_smooth: 0.0,
        };
        let tracks = TrackSet::new(0, 2);
        let eval = compute_loss(
            &LossInputs {
                rendered: &rendered,
                target_rgb: &rendered.rgb.clone(),
                target_depth: &rendered.normalized_depth(DEPTH_VALID_ALPHA),
                frame: 0,
                tracks: &tracks,
                assignments: &TrackAssignments::default(),
                posed: &posed,
                intrinsics: &k,
                extrinsics: &e,
                model: &model,
                motion_only: false,
            },
            &cfg,
        )
        .unwrap();
        assert!((eval.terms.coeff - 4.8).abs() < 1e-12, "{}", eval.terms.coeff);
    }

    #[test]
    fn loss_matches_scalar_loop_oracle_on_random_tensors() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (cloud, mut model, k, e) = toy_setup();
        for t in 0..2 {
            for b in 0..8 {
                model.coeffs.row_mut(0, t)[b] = rng.gen_range(-1.0..1.0);
            }
        }
        let posed = pose_at_time(&cloud, &model, 0).unwrap();
        let rendered = render(&posed, &k, &e, Vector3::zeros(), &RenderOptions::default()).unwrap();
        let mut target_rgb = rendered.rgb.clone();
        for p in target_rgb.pixels.iter_mut() {
            *p += Vector3::new(
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
            );
        }
        let target_depth = {
            let mut d = rendered.normalized_depth(DEPTH_VALID_ALPHA);
            for v in d.values.iter_mut() {
                if *v > 0.0 {
                    *v += rng.gen_range(-0.1..0.1);
                }
            }
            d
        };
        let cfg = LossConfig::default();
        let tracks = TrackSet::new(0, 2);
        let eval = compute_loss(
            &LossInputs {
                rendered: &rendered,
                target_rgb: &target_rgb,
                target_depth: &target_depth,
                frame: 0,
                tracks: &tracks,
                assignments: &TrackAssignments::default(),
                posed: &posed,
                intrinsics: &k,
                extrinsics: &e,
                model: &model,
                motion_only: false,
            },
            &cfg,
        )
        .unwrap();

        // Independent scalar-loop recomputation of each term.
        let npix = 24.0 * 24.0;
        let mut l1 = 0.0;
        for (r, t) in rendered.rgb.pixels.iter().zip(target_rgb.pixels.iter()) {
            for c in 0..3 {
                l1 += (r[c] - t[c]).abs();
            }
        }
        l1 = cfg.w_rgb * l1 / (npix * 3.0);
        assert!((eval.terms.rgb - l1).abs() < 1e-9);

        let ssim_term =
            cfg.w_ssim * (1.0 - crate::metrics::ssim(&rendered.rgb, &target_rgb).unwrap());
        assert!((eval.terms.ssim - ssim_term).abs() < 1e-9);

        let mut depth_sum = 0.0;
        let mut count = 0.0;
        for i in 0..(24 * 24) as usize {
            let a = rendered.alpha.values[i];
            let tgt = target_depth.values[i];
            if a > DEPTH_VALID_ALPHA && tgt > 0.0 {
                depth_sum += (rendered.depth.values[i] / a - tgt).abs();
                count += 1.0;
            }
        }
        let depth_term = if count > 0.0 {
            cfg.w_depth * depth_sum / count
        } else {
            0.0
        };
        assert!((eval.terms.depth - depth_term).abs() < 1e-9);

        let mut coeff_sum = 0.0;
        let mut smooth_sum = 0.0;
        for t in 0..2usize {
            for (b, &c) in model.coeffs.row(0, t).iter().enumerate() {
                let wgt = if b < 6 { 0.8 } else { 0.2 };
                coeff_sum += wgt * c * c;
            }
        }
        for b in 0..8 {
            let delta = model.coeffs.row(0, 1)[b] - model.coeffs.row(0, 0)[b];
            smooth_sum += delta * delta;
        }
        assert!((eval.terms.coeff - cfg.w_coeff * coeff_sum / 2.0).abs() < 1e-9);
        assert!((eval.terms.smooth - cfg.w_smooth * smooth_sum).abs() < 1e-9); // F-1 = 1 here
    }

    #[test]
    fn track_term_pulls_assigned_gaussians() {
        let (cloud, model, k, e) = toy_setup();
        let posed = pose_at_time(&cloud, &model, 0).unwrap();
        let rendered = render(&posed, &k, &e, Vector3::zeros(), &RenderOptions::default()).unwrap();
        let mut tracks = TrackSet::new(1, 2);
        // Query sits 3 px to the right of the gaussian's projection.
        tracks.set(0, 0, Vector2::new(15.0, 12.0), true);
        tracks.set(0, 1, Vector2::new(15.0, 12.0), true);
        let assignments = TrackAssignments {
            per_query: vec![vec![(0, 1.0)]],
        };
        let eval = compute_loss(
            &LossInputs {
                rendered: &rendered,
                target_rgb: &rendered.rgb.clone(),
                target_depth: &rendered.normalized_depth(DEPTH_VALID_ALPHA),
                frame: 0,
                tracks: &tracks,
                assignments: &assignments,
                posed: &posed,
                intrinsics: &k,
                extrinsics: &e,
                model: &model,
                motion_only: true,
            },
            &LossConfig::default(),
        )
        .unwrap();
        assert!(eval.terms.track > 0.0);
        assert_eq!(eval.track_mean_grads.len(), 1);
        // Moving the gaussian +x reduces the error, so the gradient is -x.
        assert!(eval.track_mean_grads[0].1.x < 0.0);
        // Motion-only mode must not emit photometric seeds or penalties.
        assert!(eval.terms.rgb == 0.0 && eval.terms.coeff == 0.0);
        assert!(eval.d_rgb.pixels.iter().all(|p| p.norm() == 0.0));
    }

    #[test]
    fn nan_target_is_reported_with_term_name() {
        let (cloud, model, k, e) = toy_setup();
        let posed = pose_at_time(&cloud, &model, 0).unwrap();
        let rendered = render(&posed, &k, &e, Vector3::zeros(), &RenderOptions::default()).unwrap();
        let mut target_rgb = rendered.rgb.clone();
        target_rgb.pixels[0].x = Real::NAN;
        let tracks = TrackSet::new(0, 2);
        let err = compute_loss(
            &LossInputs {
                rendered: &rendered,
                target_rgb: &target_rgb,
                target_depth: &rendered.normalized_depth(DEPTH_VALID_ALPHA),
                frame: 0,
                tracks: &tracks,
                assignments: &TrackAssignments::default(),
                posed: &posed,
                intrinsics: &k,
                extrinsics: &e,
                model: &model,
                motion_only: false,
            },
            &LossConfig::default(),
        )
        .unwrap_err();
        match err {
            Error::NonFiniteLoss { term } => assert_eq!(term, "rgb"),
            other => panic!("unexpected error {other}"),
        }
    }
}
