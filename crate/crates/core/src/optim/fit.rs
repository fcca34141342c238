//! Two-phase training: a motion pre-fit against track and depth losses only,
//! then joint optimization of every parameter with the full loss, Adam
//! throughout, density control over the first half of the joint phase and a
//! one-time dynamic-gaussian downsample in between. The six fixed bases never
//! receive updates.

use nalgebra::{Vector3, Vector4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{AdamScalar, AdamVec3, AdamVec4};
use super::losses::{assign_tracks, compute_loss, LossInputs, LossTerms, TrackAssignments};
use super::{init_cloud, init_motion, Config};
use crate::dataio::{HoldoutSet, SceneDataset};
use crate::error::{Error, Result};
use crate::metrics;
use crate::render::{render, render_backward, RenderOptions, RenderSeeds};
use crate::scene::{
    backward_pose_at_time, densify_and_prune, downsample, pose_at_time, DensifyGrads,
    DensifyOptions, GaussianCloud, MotionModel,
};
use crate::Real;

#[derive(Clone, Debug)]
pub struct EpochLog {
    pub phase: &'static str,
    pub epoch: usize,
    pub total: Real,
    pub rgb: Real,
    pub ssim: Real,
    pub depth: Real,
    pub track: Real,
    pub coeff: Real,
    pub smooth: Real,
    pub psnr: Real,
}

impl EpochLog {
    pub fn csv_header() -> &'static str {
        "phase,epoch,total,rgb,ssim,depth,track,coeff,smooth,psnr"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.4}",
            self.phase,
            self.epoch,
            self.total,
            self.rgb,
            self.ssim,
            self.depth,
            self.track,
            self.coeff,
            self.smooth,
            self.psnr
        )
    }
}

pub struct FitContext<'a> {
    pub dataset: &'a SceneDataset,
    pub config: &'a Config,
    pub seed: u64,
    pub workers: usize,
    pub background: Vector3<Real>,
}

pub struct FitOutcome {
    pub cloud: GaussianCloud<Real>,
    pub model: MotionModel<Real>,
    pub log: Vec<EpochLog>,
    pub final_psnr: Real,
}

/// Opacity logits live on a much coarser natural scale than positions; the
/// customary splatting practice is a far larger step size for them. The
/// learning rate stays constant over training for every group.
const OPACITY_LR_SCALE: Real = 25.0;

struct CloudOptims {
    means: AdamVec3,
    rots: AdamVec4,
    log_scales: AdamVec3,
    opacities: AdamScalar,
    colors: AdamVec3,
}

impl CloudOptims {
    fn new(lr: Real, b1: Real, b2: Real) -> Self {
        CloudOptims {
            means: AdamVec3::new(lr, b1, b2),
            rots: AdamVec4::new(lr, b1, b2),
            log_scales: AdamVec3::new(lr, b1, b2),
            opacities: AdamScalar::new(lr * OPACITY_LR_SCALE, b1, b2),
            colors: AdamVec3::new(lr, b1, b2),
        }
    }

    fn remap(&mut self, from: &[usize]) {
        self.means.remap(from);
        self.rots.remap(from);
        self.log_scales.remap(from);
        self.opacities.remap(from);
        self.colors.remap(from);
    }

    fn step(&mut self, cloud: &mut GaussianCloud<Real>, grads: &crate::scene::CanonicalGrads<Real>) {
        let n = cloud.len();
        let mut means: Vec<Vector3<Real>> = cloud.gaussians.iter().map(|g| g.mean).collect();
        let mut rots: Vec<Vector4<Real>> = cloud.gaussians.iter().map(|g| g.rot).collect();
        let mut scales: Vec<Vector3<Real>> =
            cloud.gaussians.iter().map(|g| g.log_scale).collect();
        let mut opacities: Vec<Real> = cloud.gaussians.iter().map(|g| g.opacity_logit).collect();
        let mut colors: Vec<Vector3<Real>> = cloud.gaussians.iter().map(|g| g.color).collect();
        self.means.step(&mut means, &grads.d_mean);
        self.rots.step(&mut rots, &grads.d_rot);
        self.log_scales.step(&mut scales, &grads.d_log_scale);
        self.opacities.step(&mut opacities, &grads.d_opacity_logit);
        self.colors.step(&mut colors, &grads.d_color);
        for i in 0..n {
            let g = &mut cloud.gaussians[i];
            g.mean = means[i];
            g.rot = rots[i] / rots[i].norm();
            g.log_scale = scales[i].map(|s| s.clamp((2e-6 as Real).ln(), (900.0 as Real).ln()));
            g.opacity_logit = opacities[i].clamp(-12.0, 12.0);
            g.color = colors[i].map(|c| c.clamp(0.0, 1.0));
        }
    }
}

struct StepOutput {
    terms: LossTerms,
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    ctx: &FitContext<'_>,
    cloud: &mut GaussianCloud<Real>,
    model: &mut MotionModel<Real>,
    assignments: &TrackAssignments,
    t: usize,
    motion_only: bool,
    cloud_opt: Option<&mut CloudOptims>,
    coeff_opt: &mut AdamScalar,
    basis_opt: &mut AdamScalar,
    densify_accum: Option<&mut DensifyAccum>,
) -> Result<StepOutput> {
    let dataset = ctx.dataset;
    let k = &dataset.trajectory.intrinsics;
    let e = dataset.trajectory.pose(t)?;
    let mut opts = RenderOptions::default();
    opts.workers = ctx.workers;

    let posed = pose_at_time(cloud, model, t)?;
    let rendered = render(&posed, k, e, ctx.background, &opts)?;
    let eval = compute_loss(
        &LossInputs {
            rendered: &rendered,
            target_rgb: &dataset.frames[t],
            target_depth: &dataset.depths[t],
            frame: t,
            tracks: &dataset.tracks,
            assignments,
            posed: &posed,
            intrinsics: k,
            extrinsics: e,
            model,
            motion_only,
        },
        &ctx.config.loss,
    )?;

    let mut posed_grads = render_backward(
        &rendered,
        &RenderSeeds {
            d_rgb: &eval.d_rgb,
            d_depth: &eval.d_depth,
            d_alpha: Some(&eval.d_alpha),
        },
    )?;
    for (g, grad) in &eval.track_mean_grads {
        posed_grads.d_mean[*g] += grad;
    }
    let canonical = backward_pose_at_time(cloud, model, t, &posed_grads)?;

    // Full coefficient gradient: penalty terms plus this frame's slice.
    let b_count = model.basis_count();
    let frames = model.frames();
    let mut d_coeffs = eval.d_coeffs;
    for d in 0..model.coeffs.n {
        let src = &canonical.d_coeffs_frame[d * b_count..(d + 1) * b_count];
        let dst = (d * frames + t) * b_count;
        for b in 0..b_count {
            d_coeffs[dst + b] += src[b];
        }
    }
    coeff_opt.step(&mut model.coeffs.data, &d_coeffs);

    let mut basis_params: Vec<Real> = model
        .trainable
        .iter()
        .flat_map(|tw| tw.to_array())
        .collect();
    let basis_grads: Vec<Real> = canonical
        .d_trainable
        .iter()
        .flat_map(|tw| tw.to_array())
        .collect();
    basis_opt.step(&mut basis_params, &basis_grads);
    for (j, tw) in model.trainable.iter_mut().enumerate() {
        *tw = crate::se3::Twist::from_array([
            basis_params[j * 6],
            basis_params[j * 6 + 1],
            basis_params[j * 6 + 2],
            basis_params[j * 6 + 3],
            basis_params[j * 6 + 4],
            basis_params[j * 6 + 5],
        ]);
    }

    if let Some(opt) = cloud_opt {
        opt.step(cloud, &canonical);
    }
    if let Some(accum) = densify_accum {
        accum.steps += 1;
        for i in 0..cloud.len() {
            accum.ndc_norm[i] += posed_grads.d_mean2d_ndc[i].norm();
            accum.world_dir[i] += canonical.d_mean[i];
        }
    }

    Ok(StepOutput { terms: eval.terms })
}

struct DensifyAccum {
    ndc_norm: Vec<Real>,
    world_dir: Vec<Vector3<Real>>,
    steps: usize,
}

impl DensifyAccum {
    fn new(n: usize) -> Self {
        DensifyAccum {
            ndc_norm: vec![0.0; n],
            world_dir: vec![Vector3::zeros(); n],
            steps: 0,
        }
    }

    fn mean_grads(&self) -> DensifyGrads<Real> {
        let s = (self.steps.max(1)) as Real;
        DensifyGrads {
            ndc_norm: self.ndc_norm.iter().map(|v| v / s).collect(),
            world_dir: self.world_dir.iter().map(|v| v / s).collect(),
        }
    }
}

fn holdout_psnr(
    ctx: &FitContext<'_>,
    cloud: &GaussianCloud<Real>,
    model: &MotionModel<Real>,
    holdout: Option<&HoldoutSet>,
    canonical_frame: usize,
) -> Result<Real> {
    let mut opts = RenderOptions::default();
    opts.workers = ctx.workers;
    opts.keep_aux = false;
    match holdout {
        Some(h) => {
            let mut sum = 0.0;
            for (i, &t) in h.times.iter().enumerate() {
                let posed = pose_at_time(cloud, model, t)?;
                let target = render(
                    &posed,
                    &h.trajectory.intrinsics,
                    h.trajectory.pose(i)?,
                    ctx.background,
                    &opts,
                )?;
                sum += metrics::psnr(&target.rgb, &h.frames[i])?;
            }
            Ok(sum / h.times.len() as Real)
        }
        None => {
            let t = canonical_frame;
            let posed = pose_at_time(cloud, model, t)?;
            let target = render(
                &posed,
                &ctx.dataset.trajectory.intrinsics,
                ctx.dataset.trajectory.pose(t)?,
                ctx.background,
                &opts,
            )?;
            metrics::psnr(&target.rgb, &ctx.dataset.frames[t])
        }
    }
}

fn as_divergence(err: Error, phase: &'static str, step: usize) -> Error {
    match err {
        Error::NonFiniteLoss { term } => Error::Divergence {
            phase,
            step,
            detail: format!("loss term '{term}' became non-finite"),
        },
        other => other,
    }
}

/// Run the full schedule and return the fitted state plus the metric log.
pub fn fit(ctx: &FitContext<'_>) -> Result<FitOutcome> {
    let dataset = ctx.dataset;
    dataset.validate()?;
    ctx.config.validate()?;
    let schedule = &ctx.config.schedule;
    let f = dataset.n_frames();
    let canonical_frame = f / 2;

    let mut cloud = init_cloud(dataset, canonical_frame, schedule.init_gaussians, ctx.seed)?;
    let mut model = init_motion(
        &dataset.tracks,
        &dataset.depths,
        &dataset.trajectory,
        schedule.basis_count,
        &cloud,
        canonical_frame,
        ctx.seed,
    )?;
    let fixed_digest = model.fixed_digest();
    let mut assignments = assign_tracks(
        &dataset.tracks,
        &dataset.depths[canonical_frame],
        &dataset.trajectory.intrinsics,
        dataset.trajectory.pose(canonical_frame)?,
        &cloud,
        canonical_frame,
    );

    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut log: Vec<EpochLog> = Vec::new();

    // Phase 1: motion pre-fit (coefficients + trainable bases only).
    let mut coeff_opt = AdamScalar::new(schedule.lr, schedule.adam_beta1, schedule.adam_beta2);
    let mut basis_opt = AdamScalar::new(schedule.lr, schedule.adam_beta1, schedule.adam_beta2);
    let mut order: Vec<usize> = (0..f).collect();
    let mut phase1_terms = LossTerms::default();
    for step in 0..schedule.init_iters {
        if step % f == 0 {
            order.shuffle(&mut rng);
        }
        let t = order[step % f];
        let out = train_step(
            ctx,
            &mut cloud,
            &mut model,
            &assignments,
            t,
            true,
            None,
            &mut coeff_opt,
            &mut basis_opt,
            None,
        )
        .map_err(|e| as_divergence(e, "init", step))?;
        phase1_terms = out.terms;
    }
    if schedule.init_iters > 0 {
        let psnr = holdout_psnr(ctx, &cloud, &model, dataset.holdout.as_ref(), canonical_frame)?;
        log.push(EpochLog {
            phase: "init",
            epoch: 0,
            total: phase1_terms.total(),
            rgb: phase1_terms.rgb,
            ssim: phase1_terms.ssim,
            depth: phase1_terms.depth,
            track: phase1_terms.track,
            coeff: phase1_terms.coeff,
            smooth: phase1_terms.smooth,
            psnr,
        });
    }

    // Downsample dynamic gaussians once before joint optimization. The track
    // assignments are refreshed at the top of every joint epoch.
    if schedule.downsample_factor < 1.0 {
        let out = downsample(&cloud, &model, schedule.downsample_factor, ctx.seed ^ 0xd05a)?;
        cloud = out.cloud;
        model = out.model;
    }

    // Phase 2: joint optimization with fresh optimizer state.
    let mut cloud_opt = CloudOptims::new(schedule.lr, schedule.adam_beta1, schedule.adam_beta2);
    let mut coeff_opt = AdamScalar::new(schedule.lr, schedule.adam_beta1, schedule.adam_beta2);
    let mut basis_opt = AdamScalar::new(schedule.lr, schedule.adam_beta1, schedule.adam_beta2);
    let mut densify_accum = DensifyAccum::new(cloud.len());
    let total_steps = schedule.joint_epochs * f;
    let mut global_step = 0usize;

    let mut final_psnr = 0.0;
    for epoch in 0..schedule.joint_epochs {
        // Canonical means drift; keep the track assignments current so the
        // supervised centroids stay the ones a later query would select.
        assignments = assign_tracks(
            &dataset.tracks,
            &dataset.depths[canonical_frame],
            &dataset.trajectory.intrinsics,
            dataset.trajectory.pose(canonical_frame)?,
            &cloud,
            canonical_frame,
        );
        order.shuffle(&mut rng);
        let mut epoch_terms = LossTerms::default();
        for &t in &order {
            global_step += 1;
            let out = train_step(
                ctx,
                &mut cloud,
                &mut model,
                &assignments,
                t,
                false,
                Some(&mut cloud_opt),
                &mut coeff_opt,
                &mut basis_opt,
                Some(&mut densify_accum),
            )
            .map_err(|e| as_divergence(e, "joint", global_step))?;
            epoch_terms.rgb += out.terms.rgb;
            epoch_terms.ssim += out.terms.ssim;
            epoch_terms.depth += out.terms.depth;
            epoch_terms.track += out.terms.track;
            epoch_terms.coeff += out.terms.coeff;
            epoch_terms.smooth += out.terms.smooth;

            // Adaptive density control during the first half of the phase.
            if schedule.densify_interval > 0
                && global_step % schedule.densify_interval == 0
                && global_step < total_steps / 2
            {
                let opts = DensifyOptions {
                    seed: ctx.seed ^ global_step as u64,
                    ..DensifyOptions::default()
                };
                let outcome =
                    densify_and_prune(&cloud, &model, &densify_accum.mean_grads(), &opts)?;
                // Coefficient rows move with their dynamic ordinals; remap the
                // flat Adam state accordingly.
                let old_ordinals = cloud.dynamic_ordinals();
                let b_count = model.basis_count();
                let mut coeff_from =
                    Vec::with_capacity(outcome.model.coeffs.n * f * b_count);
                for (new_i, &parent) in outcome.parent_of.iter().enumerate() {
                    if !outcome.cloud.dynamic_mask[new_i] {
                        continue;
                    }
                    let old_row = old_ordinals[parent].expect("dynamic parent");
                    for t in 0..f {
                        for b in 0..b_count {
                            coeff_from.push((old_row * f + t) * b_count + b);
                        }
                    }
                }
                coeff_opt.remap(&coeff_from);
                cloud_opt.remap(&outcome.parent_of);
                cloud = outcome.cloud;
                model = outcome.model;
                densify_accum = DensifyAccum::new(cloud.len());
                assignments = assign_tracks(
                    &dataset.tracks,
                    &dataset.depths[canonical_frame],
                    &dataset.trajectory.intrinsics,
                    dataset.trajectory.pose(canonical_frame)?,
                    &cloud,
                    canonical_frame,
                );
            }
        }
        let nf = f as Real;
        let psnr = holdout_psnr(ctx, &cloud, &model, dataset.holdout.as_ref(), canonical_frame)?;
        final_psnr = psnr;
        log.push(EpochLog {
            phase: "joint",
            epoch,
            total: epoch_terms.total() / nf,
            rgb: epoch_terms.rgb / nf,
            ssim: epoch_terms.ssim / nf,
            depth: epoch_terms.depth / nf,
            track: epoch_terms.track / nf,
            coeff: epoch_terms.coeff / nf,
            smooth: epoch_terms.smooth / nf,
            psnr,
        });
    }

    debug_assert_eq!(model.fixed_digest(), fixed_digest);
    Ok(FitOutcome {
        cloud,
        model,
        log,
        final_psnr,
    })
}
