//! Synthetic ground-truth scenes: a sampled cloud plus a coefficient tensor
//! realizing a known motion exactly in the hybrid-basis parameterization.
//! Frames, depths and tracks are emitted with the project's own renderer, so
//! a fitted model can be judged against known geometry and trajectories.

use nalgebra::{Vector2, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{HoldoutSet, SceneDataset};
use crate::camera::{self, CameraTrajectory, Intrinsics, TrajectoryKind, TrajectoryParams};
use crate::error::Result;
use crate::frame::RgbFrame;
use crate::optim::losses::DEPTH_VALID_ALPHA;
use crate::render::{render, RenderOptions};
use crate::scene::{logit, pose_at_time, Gaussian, GaussianCloud, MotionModel};
use crate::tracks::TrackSet;
use crate::Real;

#[derive(Clone, Debug)]
pub enum MotionKind {
    /// Every dynamic gaussian translates with this per-frame velocity.
    RigidTranslate { velocity: Vector3<Real> },
    /// The whole cloud rotates about its centroid (radians per frame).
    Rotate { axis: Vector3<Real>, rate: Real },
    /// Two groups translate in opposite directions.
    TwoCluster { velocity: Vector3<Real> },
}

#[derive(Clone, Debug)]
pub struct SynthSpec {
    pub n_gaussians: usize,
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    pub motion: MotionKind,
    pub camera: TrajectoryKind,
    pub basis_count: usize,
    pub n_tracks: usize,
    pub noise_rgb: Real,
    pub noise_depth: Real,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_gaussians: 200,
            frames: 16,
            width: 128,
            height: 96,
            motion: MotionKind::TwoCluster {
                velocity: Vector3::new(0.035, 0.014, 0.0),
            },
            camera: TrajectoryKind::Arc,
            basis_count: 15,
            n_tracks: 24,
            noise_rgb: 0.0,
            noise_depth: 0.0,
            seed: 0,
        }
    }
}

pub struct SyntheticScene {
    pub cloud: GaussianCloud<Real>,
    pub model: MotionModel<Real>,
    pub dataset: SceneDataset,
    /// Gaussian index behind each emitted track query.
    pub track_sources: Vec<usize>,
    /// Ground-truth world trajectory of each track query.
    pub gt_tracks_3d: Vec<Vec<Vector3<Real>>>,
}

fn fill_rigid_row(row: &mut [Real], omega: Vector3<Real>, v: Vector3<Real>) {
    row[0] = v.x;
    row[1] = v.y;
    row[2] = v.z;
    row[3] = omega.x;
    row[4] = omega.y;
    row[5] = omega.z;
}

pub fn synth_scene(spec: &SynthSpec) -> Result<SyntheticScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let f = spec.frames;
    let t0 = f / 2;

    // Two blobs of gaussians in front of the origin-facing cameras.
    let mut gaussians = Vec::with_capacity(spec.n_gaussians);
    let mut cluster = Vec::with_capacity(spec.n_gaussians);
    for i in 0..spec.n_gaussians {
        let group = i % 2;
        let base = if group == 0 {
            Vector3::new(-0.45, 0.0, 0.1)
        } else {
            Vector3::new(0.45, 0.05, -0.1)
        };
        let mean = base
            + Vector3::new(
                rng.gen_range(-0.22..0.22),
                rng.gen_range(-0.25..0.25),
                rng.gen_range(-0.25..0.25),
            );
        let q = {
            let v = Vector4::new(
                rng.gen_range(0.5..1.0),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            );
            v / v.norm()
        };
        let ls = rng.gen_range(-3.6..-3.0);
        gaussians.push(Gaussian {
            mean,
            rot: q,
            log_scale: Vector3::new(
                ls + rng.gen_range(-0.2..0.2),
                ls + rng.gen_range(-0.2..0.2),
                ls + rng.gen_range(-0.2..0.2),
            ),
            opacity_logit: logit(rng.gen_range(0.95..0.995)),
            color: Vector3::new(
                rng.gen_range(0.15..0.95),
                rng.gen_range(0.15..0.95),
                rng.gen_range(0.15..0.95),
            ),
        });
        cluster.push(group);
    }
    let cloud = GaussianCloud::new(gaussians, vec![true; spec.n_gaussians])?;

    // Ground-truth coefficients realize the motion exactly on the fixed bases.
    let mut model = MotionModel::new(spec.n_gaussians, f, spec.basis_count, t0, spec.seed ^ 0x5eed)?;
    let centroid: Vector3<Real> =
        cloud.gaussians.iter().map(|g| g.mean).sum::<Vector3<Real>>() / spec.n_gaussians as Real;
    for (i, g) in cloud.gaussians.iter().enumerate() {
        let _ = g;
        for t in 0..f {
            let dt = t as Real - t0 as Real;
            let row = model.coeffs.row_mut(i, t);
            match &spec.motion {
                MotionKind::RigidTranslate { velocity } => {
                    fill_rigid_row(row, Vector3::zeros(), velocity * dt);
                }
                MotionKind::Rotate { axis, rate } => {
                    // Rotation about the centroid: twist (omega, -omega x c).
                    let omega = axis.normalize() * (rate * dt);
                    fill_rigid_row(row, omega, -omega.cross(&centroid));
                }
                MotionKind::TwoCluster { velocity } => {
                    // Groups drift apart, so they never cross-occlude.
                    let sign = if cluster[i] == 0 { -1.0 } else { 1.0 };
                    fill_rigid_row(row, Vector3::zeros(), velocity * (sign * dt));
                }
            }
        }
    }

    // Cameras: an arc (or other kind) looking at the cloud from z < 0.
    let k = Intrinsics::new(
        0.9 * spec.width as Real,
        0.9 * spec.width as Real,
        spec.width as Real / 2.0,
        spec.height as Real / 2.0,
        spec.width,
        spec.height,
    )?;
    let mut params = TrajectoryParams::new(f);
    params.radius = 2.5;
    params.sweep_degrees = 24.0;
    params.dolly = Vector3::new(0.0, 0.0, -0.3);
    let trajectory = match spec.camera {
        TrajectoryKind::Static => {
            // A static camera still needs to face the cloud.
            let pose = camera::look_at(&Vector3::new(0.0, 0.0, -2.5), &Vector3::zeros())?;
            CameraTrajectory::new(
                k,
                vec![camera::Extrinsics::new(pose); f],
                params.frame_rate,
            )?
        }
        kind => camera::make_trajectory(kind, k, &params)?,
    };

    // Render frames and depths from the ground truth. The emitted depth is
    // the dominant-surface depth, matching what a monocular depth model
    // reports; blended depth would smuggle occluded content into the z
    // targets used for track lifting.
    let mut opts = RenderOptions::default();
    opts.workers = 1;
    let background = Vector3::new(0.04, 0.04, 0.06);
    let mut frames = Vec::with_capacity(f);
    let mut depths = Vec::with_capacity(f);
    for t in 0..f {
        let posed = pose_at_time(&cloud, &model, t)?;
        let target = render(&posed, &trajectory.intrinsics, trajectory.pose(t)?, background, &opts)?;
        frames.push(target.rgb.clone());
        depths.push(target.dominant_depth(DEPTH_VALID_ALPHA)?);
    }

    // Exact 2D tracks from projected ground-truth trajectories. Queries are
    // drawn from gaussians that are the visible surface at the canonical
    // frame, as a 2D tracker would do.
    let t0_pose = trajectory.pose(t0)?;
    let posed_t0 = pose_at_time(&cloud, &model, t0)?;
    let is_surface_at_t0 = |gi: usize| -> bool {
        match camera::project_point(&posed_t0.means[gi], &trajectory.intrinsics, t0_pose) {
            Ok((uv, z)) => {
                if uv.x < 0.0
                    || uv.x >= spec.width as Real
                    || uv.y < 0.0
                    || uv.y >= spec.height as Real
                {
                    return false;
                }
                let d = depths[t0].at(uv.x.round() as u32, uv.y.round() as u32);
                d > 0.0 && (d - z).abs() < 0.08
            }
            Err(_) => false,
        }
    };
    let n_tracks = spec.n_tracks.min(spec.n_gaussians);
    let mut candidates = rand::seq::index::sample(
        &mut rng,
        spec.n_gaussians,
        spec.n_gaussians,
    )
    .into_vec();
    candidates.retain(|&gi| is_surface_at_t0(gi));
    let mut track_sources: Vec<usize> = candidates.into_iter().take(n_tracks).collect();
    track_sources.sort_unstable();
    let n_tracks = track_sources.len();
    let mut tracks = TrackSet::new(n_tracks, f);
    let mut gt_tracks_3d = Vec::with_capacity(n_tracks);
    for (q, &gi) in track_sources.iter().enumerate() {
        let traj = crate::scene::track_gaussian(gi, &model, &cloud)?;
        for (t, p) in traj.iter().enumerate() {
            match camera::project_point(p, &trajectory.intrinsics, trajectory.pose(t)?) {
                Ok((uv, z)) => {
                    let in_bounds = uv.x >= 0.0
                        && uv.x < spec.width as Real
                        && uv.y >= 0.0
                        && uv.y < spec.height as Real;
                    // Occluded points are flagged invisible: the scene depth
                    // at the pixel must belong to the tracked gaussian.
                    let visible = in_bounds && {
                        let px = uv.x.round().clamp(0.0, spec.width as Real - 1.0) as u32;
                        let py = uv.y.round().clamp(0.0, spec.height as Real - 1.0) as u32;
                        let d = depths[t].at(px, py);
                        d > 0.0 && (d - z).abs() < 0.08
                    };
                    tracks.set(q, t, clamp_uv(uv, spec.width, spec.height), visible);
                }
                Err(_) => tracks.set(q, t, Vector2::zeros(), false),
            }
        }
        gt_tracks_3d.push(traj);
    }

    // Optional observation noise (tracks stay exact).
    if spec.noise_rgb > 0.0 {
        for frame in frames.iter_mut() {
            for p in frame.pixels.iter_mut() {
                for c in 0..3 {
                    p[c] = (p[c]
                        + rng.sample::<Real, _>(rand_distr::StandardNormal) * spec.noise_rgb)
                        .clamp(0.0, 1.0);
                }
            }
        }
    }
    if spec.noise_depth > 0.0 {
        for depth in depths.iter_mut() {
            for v in depth.values.iter_mut() {
                if *v > 0.0 {
                    *v = (*v
                        + rng.sample::<Real, _>(rand_distr::StandardNormal) * spec.noise_depth)
                        .max(1e-3);
                }
            }
        }
    }

    // Holdout views: the same arc swung further out, a few sample times.
    let holdout = {
        let mut hparams = params.clone();
        hparams.frames = 4;
        hparams.sweep_degrees = 40.0;
        let htraj = camera::make_trajectory(TrajectoryKind::Arc, k, &hparams)?;
        let times: Vec<usize> = vec![0, f / 3, (2 * f) / 3, f - 1];
        let mut hframes = Vec::new();
        for (i, &t) in times.iter().enumerate() {
            let posed = pose_at_time(&cloud, &model, t)?;
            let target = render(&posed, &htraj.intrinsics, htraj.pose(i)?, background, &opts)?;
            hframes.push(target.rgb);
        }
        HoldoutSet {
            trajectory: htraj,
            times,
            frames: hframes,
        }
    };

    let dataset = SceneDataset {
        frames,
        depths,
        tracks,
        masks: None,
        trajectory,
        holdout: Some(holdout),
    };
    dataset.validate()?;
    Ok(SyntheticScene {
        cloud,
        model,
        dataset,
        track_sources,
        gt_tracks_3d,
    })
}

fn clamp_uv(uv: Vector2<Real>, w: u32, h: u32) -> Vector2<Real> {
    Vector2::new(
        uv.x.clamp(0.0, w as Real - 1e-6),
        uv.y.clamp(0.0, h as Real - 1e-6),
    )
}

/// RGB frame with a fixed background; used by self-consistency tests.
pub(crate) fn _render_gt_frame(
    scene: &SyntheticScene,
    t: usize,
) -> Result<RgbFrame<Real>> {
    let mut opts = RenderOptions::default();
    opts.workers = 1;
    let posed = pose_at_time(&scene.cloud, &scene.model, t)?;
    Ok(render(
        &posed,
        &scene.dataset.trajectory.intrinsics,
        scene.dataset.trajectory.pose(t)?,
        Vector3::new(0.04, 0.04, 0.06),
        &opts,
    )?
    .rgb)
}
