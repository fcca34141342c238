//! Fit a synthetic two-cluster scene end to end and print the metric log.
//!
//! cargo run --release -p splat4d --example synthetic_fit -- [epochs] [lr]

use nalgebra::Vector3;
use splat4d::dataio::{synth_scene, SynthSpec};
use splat4d::optim::{fit, Config, FitContext};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let init_iters: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(200);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-4);

    let spec = SynthSpec {
        n_gaussians: 200,
        frames: 16,
        width: 128,
        height: 96,
        n_tracks: 64,
        noise_rgb: 0.005,
        noise_depth: 0.001,
        seed: 7,
        ..SynthSpec::default()
    };
    let scene = synth_scene(&spec).expect("synth scene");

    let mut config = Config::default();
    config.schedule.init_iters = init_iters;
    config.schedule.joint_epochs = epochs;
    config.schedule.lr = lr;
    config.schedule.init_gaussians = 2000;

    let started = std::time::Instant::now();
    let outcome = fit(&FitContext {
        dataset: &scene.dataset,
        config: &config,
        seed: 7,
        workers: 0,
        background: Vector3::new(0.04, 0.04, 0.06),
    })
    .expect("fit");

    println!("{}", splat4d::optim::EpochLog::csv_header());
    for row in &outcome.log {
        println!("{}", row.csv_row());
    }

    // Holdout SSIM, matching the PSNR evaluation views.
    let holdout = scene.dataset.holdout.as_ref().unwrap();
    let mut ssim_sum = 0.0;
    for (i, &t) in holdout.times.iter().enumerate() {
        let posed = splat4d::scene::pose_at_time(&outcome.cloud, &outcome.model, t).unwrap();
        let r = splat4d::render::render(
            &posed,
            &holdout.trajectory.intrinsics,
            holdout.trajectory.pose(i).unwrap(),
            Vector3::new(0.04, 0.04, 0.06),
            &splat4d::render::RenderOptions::default(),
        )
        .unwrap();
        ssim_sum += splat4d::metrics::ssim(&r.rgb, &holdout.frames[i]).unwrap();
    }
    println!("holdout ssim {:.4}", ssim_sum / holdout.times.len() as f64);

    // Endpoint displacement error of recovered 3D tracks vs ground truth,
    // relative to the ground-truth endpoint displacement.
    let t0 = scene.dataset.n_frames() / 2;
    let last = scene.dataset.n_frames() - 1;
    let recovered = splat4d::optim::track_query_pixels(
        &scene.dataset.tracks,
        &scene.dataset.depths[t0],
        &scene.dataset.trajectory.intrinsics,
        scene.dataset.trajectory.pose(t0).unwrap(),
        &outcome.cloud,
        &outcome.model,
        splat4d::optim::TRACK_KNN,
    )
    .unwrap();
    let mut worst: f64 = 0.0;
    let mut errs = Vec::new();
    let mut evaluable = Vec::new();
    for (q, traj) in &recovered {
        // Endpoint error is well-posed only for queries observed at both the
        // canonical and endpoint frames.
        if !scene.dataset.tracks.is_visible(*q, last) {
            continue;
        }
        let gt = &scene.gt_tracks_3d[*q];
        let displacement = (gt[last] - gt[t0]).norm().max(1e-9);
        let err = ((traj[last] - traj[t0]) - (gt[last] - gt[t0])).norm() / displacement;
        errs.push((err, *q, displacement));
        evaluable.push(err);
        worst = worst.max(err);
    }
    println!(
        "mean endpoint error {:.4} over {} evaluable queries",
        evaluable.iter().sum::<f64>() / evaluable.len() as f64,
        evaluable.len()
    );
    errs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    for (e, q, d) in errs.iter().take(8) {
        let gi = scene.track_sources[*q];
        // Detailed breakdown: 2D reprojection error and z error at endpoints.
        let traj = &recovered.iter().find(|(rq, _)| rq == q).unwrap().1;
        let ktr = &scene.dataset.trajectory;
        let mut px_err = [0.0f64; 2];
        let mut z_err = [0.0f64; 2];
        for (slot, &t) in [t0, last].iter().enumerate() {
            if let Ok((uv, z)) =
                splat4d::camera::project_point(&traj[t], &ktr.intrinsics, ktr.pose(t).unwrap())
            {
                px_err[slot] = (uv - scene.dataset.tracks.position(*q, t)).norm();
                let (_, gtz) = splat4d::camera::project_point(
                    &scene.gt_tracks_3d[*q][t],
                    &ktr.intrinsics,
                    ktr.pose(t).unwrap(),
                )
                .unwrap();
                z_err[slot] = z - gtz;
            }
        }
        println!(
            "  q{q} (gaussian {gi}, cluster {}): rel err {e:.4}, gt disp {d:.4}, px err t0/{last} = {:.2}/{:.2}, z err = {:+.4}/{:+.4}",
            gi % 2, px_err[0], px_err[1], z_err[0], z_err[1]
        );
    }
    println!("worst relative endpoint error {:.4}", worst);

    // Shape of the worst recovered trajectory: displacement x per frame.
    let worst_q = errs[0].1;
    let traj = &recovered.iter().find(|(rq, _)| rq == &worst_q).unwrap().1;
    let gt = &scene.gt_tracks_3d[worst_q];
    println!("worst query displacement profile (recovered vs gt, x|y|z):");
    for t in 0..scene.dataset.n_frames() {
        let r = traj[t] - traj[t0];
        let g = gt[t] - gt[t0];
        println!(
            "  t{t:02}: ({:+.4},{:+.4},{:+.4}) vs ({:+.4},{:+.4},{:+.4})",
            r.x, r.y, r.z, g.x, g.y, g.z
        );
    }
    println!(
        "final psnr {:.2} dB, gaussians {}, elapsed {:.1?}",
        outcome.final_psnr,
        outcome.cloud.len(),
        started.elapsed()
    );
}
