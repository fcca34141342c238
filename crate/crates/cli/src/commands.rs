//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use nalgebra::{Vector2, Vector3};

use splat4d::camera::{
    make_trajectory, read_trajectory, write_plucker_sequence, write_trajectory, CameraTrajectory,
    Intrinsics, TrajectoryKind, TrajectoryParams,
};
use splat4d::dataio::{
    export_cloud, export_motion, export_renders, export_tracks_3d, load_dataset, read_rgb_png,
    save_dataset, synth_scene, MotionKind, SynthSpec,
};
use splat4d::metrics::{psnr, ssim};
use splat4d::optim::{fit, track_query_pixels, Config, EpochLog, FitContext, TRACK_KNN};
use splat4d::render::{render, RenderOptions};
use splat4d::scene::pose_at_time;
use splat4d::{Error, Real};

use crate::manifest::ManifestWriter;
use crate::state::{load_state, save_state};

fn parse_vec3(s: &str) -> Result<Vector3<Real>, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected x,y,z but got '{s}'"));
    }
    let mut v = [0.0; 3];
    for (i, p) in parts.iter().enumerate() {
        v[i] = p.trim().parse::<Real>().map_err(|e| e.to_string())?;
    }
    Ok(Vector3::new(v[0], v[1], v[2]))
}

// ---------------------------------------------------------------------------
// trajectory
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct TrajectoryArgs {
    /// orbit | dolly | arc | static
    #[arg(long)]
    kind: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 80)]
    frames: usize,
    #[arg(long, default_value_t = 960)]
    width: u32,
    #[arg(long, default_value_t = 720)]
    height: u32,
    /// Focal length in pixels (applied to both axes unless fy is given)
    #[arg(long, default_value_t = 864.0)]
    fx: Real,
    #[arg(long)]
    fy: Option<Real>,
    #[arg(long, default_value_t = 30.0)]
    frame_rate: f64,
    #[arg(long, default_value_t = 2.0)]
    radius: Real,
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,0")]
    target: Vector3<Real>,
    /// Angular sweep in degrees for orbit/arc
    #[arg(long)]
    sweep_degrees: Option<Real>,
    /// Total dolly translation over the clip
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,1")]
    dolly: Vector3<Real>,
    /// Camera height above the target for orbit/arc
    #[arg(long, default_value_t = 0.0)]
    height_offset: Real,
    /// Also export the per-frame 6-channel ray embeddings (raw f32)
    #[arg(long)]
    export_plucker: bool,
}

pub fn run_trajectory(args: TrajectoryArgs) -> anyhow::Result<()> {
    let kind: TrajectoryKind = args.kind.parse()?;
    let manifest = ManifestWriter::begin(
        "trajectory",
        &args.out,
        0,
        1,
        &[],
        serde_json::json!({
            "kind": args.kind, "frames": args.frames,
            "width": args.width, "height": args.height,
        }),
    )?;
    let intrinsics = Intrinsics::new(
        args.fx,
        args.fy.unwrap_or(args.fx),
        args.width as Real / 2.0,
        args.height as Real / 2.0,
        args.width,
        args.height,
    )?;
    let mut params = TrajectoryParams::new(args.frames);
    params.frame_rate = args.frame_rate;
    params.radius = args.radius;
    params.target = args.target;
    params.dolly = args.dolly;
    params.height = args.height_offset;
    if let Some(s) = args.sweep_degrees {
        params.sweep_degrees = s;
    } else if kind == TrajectoryKind::Arc {
        params.sweep_degrees = 30.0;
    }
    let trajectory = make_trajectory(kind, intrinsics, &params)?;
    write_trajectory(&trajectory, &args.out.join("camera.json"))?;
    if args.export_plucker {
        write_plucker_sequence(&trajectory, &args.out.join("plucker"))?;
    }
    println!(
        "wrote {} poses to {}",
        trajectory.len(),
        args.out.join("camera.json").display()
    );
    manifest.finish()
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct FitArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON config file (loss weights + schedule); flags below override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// 0 = all cores; 1 = serial
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,0")]
    background: Vector3<Real>,
    #[arg(long)]
    lr: Option<Real>,
    #[arg(long)]
    init_iters: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    basis_count: Option<usize>,
    #[arg(long)]
    init_gaussians: Option<usize>,
    #[arg(long)]
    downsample: Option<Real>,
}

pub fn resolve_config(path: Option<&Path>, args: &FitArgs) -> anyhow::Result<Config> {
    let mut config = match path {
        Some(p) => serde_json::from_str(
            &fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )
        .map_err(|e| Error::parse(p.display().to_string(), e.to_string()))?,
        None => Config::default(),
    };
    if let Some(v) = args.lr {
        config.schedule.lr = v;
    }
    if let Some(v) = args.init_iters {
        config.schedule.init_iters = v;
    }
    if let Some(v) = args.epochs {
        config.schedule.joint_epochs = v;
    }
    if let Some(v) = args.basis_count {
        config.schedule.basis_count = v;
    }
    if let Some(v) = args.init_gaussians {
        config.schedule.init_gaussians = v;
    }
    if let Some(v) = args.downsample {
        config.schedule.downsample_factor = v;
    }
    config.validate()?;
    Ok(config)
}

pub fn run_fit(args: FitArgs) -> anyhow::Result<()> {
    let config = resolve_config(args.config.as_deref(), &args)?;
    let manifest = ManifestWriter::begin(
        "fit",
        &args.out,
        args.seed,
        args.workers,
        &[args.dataset.as_path()],
        serde_json::to_value(&config)?,
    )?;
    fs::write(
        args.out.join("config.json"),
        serde_json::to_string_pretty(&config)?,
    )?;

    let dataset = load_dataset(&args.dataset)?;
    let outcome = fit(&FitContext {
        dataset: &dataset,
        config: &config,
        seed: args.seed,
        workers: args.workers,
        background: args.background,
    })?;

    let canonical_frame = dataset.n_frames() / 2;
    save_state(
        &args.out,
        &outcome.cloud,
        &outcome.model,
        &dataset.trajectory,
        args.background,
        &dataset.depths[canonical_frame],
    )?;
    let mut csv = String::from(EpochLog::csv_header());
    csv.push('\n');
    for row in &outcome.log {
        csv.push_str(&row.csv_row());
        csv.push('\n');
    }
    fs::write(args.out.join("metrics.csv"), csv)?;
    println!(
        "fit finished: {} gaussians, final psnr {:.2} dB",
        outcome.cloud.len(),
        outcome.final_psnr
    );
    manifest.finish()
}

// ---------------------------------------------------------------------------
// render
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct RenderArgs {
    /// Directory written by `fit`
    #[arg(long)]
    state: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Camera trajectory to render (defaults to the training trajectory)
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Motion frame id per rendered pose, comma separated; a single value is
    /// broadcast. Default: pose index clamped to the clip length.
    #[arg(long)]
    times: Option<String>,
    /// Render four offset view sequences (left/right/top/bottom)
    #[arg(long)]
    offsets: bool,
    /// Camera-center offset distance for --offsets
    #[arg(long, default_value_t = 0.4)]
    offset_amount: Real,
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

fn parse_times(spec: Option<&str>, n_poses: usize, frames: usize) -> anyhow::Result<Vec<usize>> {
    let times = match spec {
        None => (0..n_poses).map(|i| i.min(frames - 1)).collect(),
        Some(s) => {
            let vals: Vec<usize> = s
                .split(',')
                .map(|p| p.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|e| Error::InvalidArgument(format!("bad --times: {e}")))?;
            if vals.len() == 1 {
                vec![vals[0]; n_poses]
            } else if vals.len() == n_poses {
                vals
            } else {
                return Err(Error::InvalidArgument(format!(
                    "--times has {} entries for {} poses",
                    vals.len(),
                    n_poses
                ))
                .into());
            }
        }
    };
    for &t in &times {
        if t >= frames {
            return Err(Error::OutOfRange {
                what: "frame",
                index: t,
                len: frames,
            }
            .into());
        }
    }
    Ok(times)
}

fn render_sequence(
    state: &crate::state::FitState,
    trajectory: &CameraTrajectory<Real>,
    times: &[usize],
    out: &Path,
    workers: usize,
) -> anyhow::Result<()> {
    let mut opts = RenderOptions::default();
    opts.workers = workers;
    opts.keep_aux = false;
    let mut targets = Vec::new();
    for (i, &t) in times.iter().enumerate() {
        let posed = pose_at_time(&state.cloud, &state.model, t)?;
        targets.push(render(
            &posed,
            &trajectory.intrinsics,
            trajectory.pose(i)?,
            state.background,
            &opts,
        )?);
    }
    export_renders(&targets, out)?;
    Ok(())
}

pub fn run_render(args: RenderArgs) -> anyhow::Result<()> {
    let mut inputs: Vec<&Path> = vec![args.state.as_path()];
    if let Some(t) = &args.trajectory {
        inputs.push(t.as_path());
    }
    let manifest = ManifestWriter::begin(
        "render",
        &args.out,
        0,
        args.workers,
        &inputs,
        serde_json::json!({"offsets": args.offsets, "times": args.times}),
    )?;
    let state = load_state(&args.state)?;
    let frames = state.model.frames();

    if args.offsets {
        // Four sequences around the training trajectory: camera centers
        // shifted along the camera-frame right/up axes.
        let shifts: [(&str, Vector3<Real>); 4] = [
            ("left", Vector3::new(-args.offset_amount, 0.0, 0.0)),
            ("right", Vector3::new(args.offset_amount, 0.0, 0.0)),
            ("top", Vector3::new(0.0, -args.offset_amount, 0.0)),
            ("bottom", Vector3::new(0.0, args.offset_amount, 0.0)),
        ];
        let times = parse_times(args.times.as_deref(), state.trajectory.len(), frames)?;
        for (name, shift) in shifts {
            let mut traj = state.trajectory.clone();
            for pose in traj.poses.iter_mut() {
                // Moving the camera center by s (camera frame) changes the
                // world->camera translation by -s.
                pose.pose.translation -= shift;
            }
            render_sequence(&state, &traj, &times, &args.out.join(name), args.workers)?;
        }
    } else {
        let trajectory = match &args.trajectory {
            Some(path) => read_trajectory(path)?,
            None => state.trajectory.clone(),
        };
        let times = parse_times(args.times.as_deref(), trajectory.len(), frames)?;
        render_sequence(&state, &trajectory, &times, &args.out, args.workers)?;
    }
    manifest.finish()
}

// ---------------------------------------------------------------------------
// track
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct TrackArgs {
    #[arg(long)]
    state: PathBuf,
    /// Query pixels "u,v;u,v;..." at the canonical frame
    #[arg(long)]
    queries: Option<String>,
    /// File with one "u,v" query per line
    #[arg(long)]
    queries_file: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

pub fn run_track(args: TrackArgs) -> anyhow::Result<()> {
    let out_dir = args
        .out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let manifest = ManifestWriter::begin(
        "track",
        &out_dir,
        0,
        1,
        &[args.state.as_path()],
        serde_json::json!({"queries": args.queries}),
    )?;
    let state = load_state(&args.state)?;

    let spec = match (&args.queries, &args.queries_file) {
        (Some(q), _) => q.clone(),
        (None, Some(f)) => fs::read_to_string(f)?.lines().collect::<Vec<_>>().join(";"),
        (None, None) => {
            return Err(Error::InvalidArgument(
                "provide --queries or --queries-file".into(),
            )
            .into())
        }
    };
    let mut queries = Vec::new();
    for part in spec.split(';').filter(|p| !p.trim().is_empty()) {
        let uv: Vec<&str> = part.split(',').collect();
        if uv.len() != 2 {
            return Err(Error::InvalidArgument(format!("bad query '{part}'")).into());
        }
        let u: Real = uv[0].trim().parse().map_err(|_| {
            Error::InvalidArgument(format!("bad query coordinate '{}'", uv[0]))
        })?;
        let v: Real = uv[1].trim().parse().map_err(|_| {
            Error::InvalidArgument(format!("bad query coordinate '{}'", uv[1]))
        })?;
        let (w, h) = (
            state.trajectory.intrinsics.width as Real,
            state.trajectory.intrinsics.height as Real,
        );
        if u < 0.0 || u >= w || v < 0.0 || v >= h {
            return Err(Error::InvalidArgument(format!(
                "query ({u}, {v}) outside the {w}x{h} image"
            ))
            .into());
        }
        queries.push(Vector2::new(u, v));
    }

    // Queries on static content give constant trajectories; dynamic queries
    // follow the soft nearest-gaussian motion.
    let canonical = state.model.canonical_frame;
    let frames = state.model.frames();
    let mut query_set = splat4d::tracks::TrackSet::new(queries.len(), frames);
    for (q, uv) in queries.iter().enumerate() {
        query_set.set(q, canonical, *uv, true);
    }
    let pose0 = state.trajectory.pose(canonical)?;
    let k = &state.trajectory.intrinsics;

    let dynamic = track_query_pixels(
        &query_set,
        &state.canonical_depth,
        k,
        pose0,
        &state.cloud,
        &state.model,
        TRACK_KNN,
    )?;

    let mut rows: Vec<(usize, Vec<Vector3<Real>>)> = Vec::new();
    for (q, uv) in queries.iter().enumerate() {
        // If the nearest gaussian overall is static the point does not move.
        let lifted = {
            let px = (uv.x.round() as u32).min(k.width - 1);
            let py = (uv.y.round() as u32).min(k.height - 1);
            let z = state.canonical_depth.at(px, py);
            (z.is_finite() && z > 0.0)
                .then(|| splat4d::camera::unproject_pixel(uv.x, uv.y, z, k, pose0))
        };
        let nearest_static = lifted.map(|point| {
            let mut best = (Real::INFINITY, false, Vector3::zeros());
            for (g, &dyn_flag) in state
                .cloud
                .gaussians
                .iter()
                .zip(state.cloud.dynamic_mask.iter())
            {
                let d = (g.mean - point).norm();
                if d < best.0 {
                    best = (d, !dyn_flag, g.mean);
                }
            }
            best
        });
        match nearest_static {
            Some((_, true, mean)) => rows.push((q, vec![mean; frames])),
            _ => {
                if let Some((_, traj)) = dynamic.iter().find(|(dq, _)| *dq == q) {
                    rows.push((q, traj.clone()));
                } else {
                    log::warn!("query {q} could not be tracked (no depth at pixel)");
                }
            }
        }
    }
    export_tracks_3d(&rows, &args.out)?;
    println!("wrote {} trajectories to {}", rows.len(), args.out.display());
    manifest.finish()
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct EvalArgs {
    /// Directory of rendered images (rgb_*.png or *.png)
    #[arg(long)]
    renders: PathBuf,
    /// Directory of reference images
    #[arg(long)]
    reference: PathBuf,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

fn list_pngs(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().map_or(false, |e| e == "png")
                && !p
                    .file_name()
                    .map_or(false, |n| n.to_string_lossy().starts_with("depth"))
        })
        .collect();
    out.sort();
    Ok(out)
}

pub fn run_eval(args: EvalArgs) -> anyhow::Result<()> {
    let out_dir = args
        .out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let manifest = ManifestWriter::begin(
        "eval",
        &out_dir,
        0,
        1,
        &[args.renders.as_path(), args.reference.as_path()],
        serde_json::Value::Null,
    )?;
    let rendered = list_pngs(&args.renders)?;
    let reference = list_pngs(&args.reference)?;
    if rendered.len() != reference.len() || rendered.is_empty() {
        return Err(Error::Validation(format!(
            "image count mismatch: {} rendered vs {} reference",
            rendered.len(),
            reference.len()
        ))
        .into());
    }
    // The perceptual-network metric column is omitted: no pretrained network.
    let mut csv = String::from("# metrics: psnr, ssim (perceptual metric omitted)\nframe,psnr,ssim\n");
    let (mut psnr_sum, mut ssim_sum) = (0.0, 0.0);
    for (i, (r, t)) in rendered.iter().zip(reference.iter()).enumerate() {
        let a = read_rgb_png(r)?;
        let b = read_rgb_png(t)?;
        let p = psnr(&a, &b)?;
        let s = ssim(&a, &b)?;
        psnr_sum += p;
        ssim_sum += s;
        csv.push_str(&format!("{i},{p:.4},{s:.6}\n"));
    }
    let n = rendered.len() as Real;
    csv.push_str(&format!("mean,{:.4},{:.6}\n", psnr_sum / n, ssim_sum / n));
    fs::write(&args.out, &csv)?;
    println!(
        "mean psnr {:.2} dB, mean ssim {:.4} over {} frames",
        psnr_sum / n,
        ssim_sum / n,
        rendered.len()
    );
    manifest.finish()
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    gaussians: usize,
    #[arg(long, default_value_t = 16)]
    frames: usize,
    #[arg(long, default_value_t = 128)]
    width: u32,
    #[arg(long, default_value_t = 96)]
    height: u32,
    /// rigid-translate | rotate | two-cluster
    #[arg(long, default_value = "two-cluster")]
    motion: String,
    #[arg(long, value_parser = parse_vec3, default_value = "0.035,0.014,0")]
    velocity: Vector3<Real>,
    /// Rotation rate (radians/frame) for --motion rotate
    #[arg(long, default_value_t = 0.02)]
    rate: Real,
    #[arg(long, value_parser = parse_vec3, default_value = "0,1,0")]
    axis: Vector3<Real>,
    /// orbit | dolly | arc | static
    #[arg(long, default_value = "arc")]
    camera: String,
    #[arg(long, default_value_t = 15)]
    basis_count: usize,
    #[arg(long, default_value_t = 64)]
    tracks: usize,
    #[arg(long, default_value_t = 0.0)]
    noise_rgb: Real,
    #[arg(long, default_value_t = 0.0)]
    noise_depth: Real,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn run_synth(args: SynthArgs) -> anyhow::Result<()> {
    let motion = match args.motion.as_str() {
        "rigid-translate" => MotionKind::RigidTranslate {
            velocity: args.velocity,
        },
        "rotate" => MotionKind::Rotate {
            axis: args.axis,
            rate: args.rate,
        },
        "two-cluster" => MotionKind::TwoCluster {
            velocity: args.velocity,
        },
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown motion '{other}' (rigid-translate|rotate|two-cluster)"
            ))
            .into())
        }
    };
    let camera: TrajectoryKind = args.camera.parse()?;
    let manifest = ManifestWriter::begin(
        "synth",
        &args.out,
        args.seed,
        1,
        &[],
        serde_json::json!({
            "gaussians": args.gaussians, "frames": args.frames,
            "motion": args.motion, "camera": args.camera,
        }),
    )?;
    let spec = SynthSpec {
        n_gaussians: args.gaussians,
        frames: args.frames,
        width: args.width,
        height: args.height,
        motion,
        camera,
        basis_count: args.basis_count,
        n_tracks: args.tracks,
        noise_rgb: args.noise_rgb,
        noise_depth: args.noise_depth,
        seed: args.seed,
    };
    let scene = synth_scene(&spec)?;
    save_dataset(&scene.dataset, &args.out)?;
    // Ground truth for benchmarking lives next to the dataset.
    let gt = args.out.join("gt");
    fs::create_dir_all(&gt)?;
    export_cloud(&scene.cloud, &gt.join("cloud.ply"))?;
    export_motion(&scene.model, &gt.join("motion"))?;
    let rows: Vec<(usize, Vec<Vector3<Real>>)> = scene
        .gt_tracks_3d
        .iter()
        .enumerate()
        .map(|(q, traj)| (q, traj.clone()))
        .collect();
    export_tracks_3d(&rows, &gt.join("tracks3d.tsv"))?;
    println!(
        "wrote synthetic dataset ({} frames, {} tracks) to {}",
        args.frames,
        scene.dataset.tracks.n_queries(),
        args.out.display()
    );
    manifest.finish()
}
