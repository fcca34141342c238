//! Inspect the quality of the depth/track initialization alone.

use splat4d::dataio::{synth_scene, SynthSpec};
use splat4d::optim::{assign_tracks, init_cloud, init_motion, track_query_pixels};

fn main() {
    let spec = SynthSpec {
        n_gaussians: 200,
        frames: 16,
        width: 128,
        height: 96,
        noise_rgb: 0.01,
        noise_depth: 0.005,
        seed: 7,
        ..SynthSpec::default()
    };
    let scene = synth_scene(&spec).expect("synth scene");
    let t0 = 16 / 2;
    let cloud = init_cloud(&scene.dataset, t0, 4000, 7).expect("init cloud");
    let model = init_motion(
        &scene.dataset.tracks,
        &scene.dataset.depths,
        &scene.dataset.trajectory,
        15,
        &cloud,
        t0,
        7,
    )
    .expect("init motion");

    // How well do the initialized gaussian means sit on the true surface?
    println!("cloud size {}", cloud.len());

    // Coefficient statistics.
    let max_c = model.coeffs.data.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
    println!("max |coeff| {max_c:.4}");
    for j in 0..model.trainable.len() {
        let tw = &model.trainable[j];
        if tw.v.norm() > 0.5 {
            println!("  basis {j}: v = ({:.3}, {:.3}, {:.3})", tw.v.x, tw.v.y, tw.v.z);
        }
    }

    let last = 15;
    let recovered = track_query_pixels(
        &scene.dataset.tracks,
        &scene.dataset.depths[t0],
        &scene.dataset.trajectory.intrinsics,
        scene.dataset.trajectory.pose(t0).unwrap(),
        &cloud,
        &model,
        splat4d::optim::TRACK_KNN,
    )
    .unwrap();
    let mut errs: Vec<(f64, usize)> = Vec::new();
    for (q, traj) in &recovered {
        let gt = &scene.gt_tracks_3d[*q];
        let displacement = (gt[last] - gt[t0]).norm().max(1e-9);
        let err = ((traj[last] - traj[t0]) - (gt[last] - gt[t0])).norm() / displacement;
        errs.push((err, *q));
    }
    errs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    println!("worst init endpoint errors:");
    for (e, q) in errs.iter().take(6) {
        println!("  q{q}: {e:.4} (cluster {})", scene.track_sources[*q] % 2);
    }
    let mean: f64 = errs.iter().map(|(e, _)| e).sum::<f64>() / errs.len() as f64;
    println!("mean {mean:.4}");

    // Direct check on one query: recovered vs gt displacement vectors.
    let (q, traj) = &recovered[0];
    let gt = &scene.gt_tracks_3d[*q];
    println!(
        "q{} recovered disp ({:.4},{:.4},{:.4}) vs gt ({:.4},{:.4},{:.4})",
        q,
        traj[last].x - traj[t0].x,
        traj[last].y - traj[t0].y,
        traj[last].z - traj[t0].z,
        gt[last].x - gt[t0].x,
        gt[last].y - gt[t0].y,
        gt[last].z - gt[t0].z
    );

    // And the raw k-means side: how many tracks were usable?
    let assignments = assign_tracks(
        &scene.dataset.tracks,
        &scene.dataset.depths[t0],
        &scene.dataset.trajectory.intrinsics,
        scene.dataset.trajectory.pose(t0).unwrap(),
        &cloud,
        t0,
    );
    let assigned = assignments.per_query.iter().filter(|a| !a.is_empty()).count();
    println!("assigned queries {assigned}/{}", scene.dataset.tracks.n_queries());

    // Raw cluster structure via a rerun of the lift+cluster stage.
    {
        use splat4d::camera::unproject_pixel;
        let traj = &scene.dataset.trajectory;
        let lift = |q: usize, t: usize| -> Option<nalgebra::Vector3<f64>> {
            if !scene.dataset.tracks.is_visible(q, t) {
                return None;
            }
            let uv = scene.dataset.tracks.position(q, t);
            let d = &scene.dataset.depths[t];
            let (px, py) = (
                (uv.x.round() as i64).clamp(0, d.width as i64 - 1) as u32,
                (uv.y.round() as i64).clamp(0, d.height as i64 - 1) as u32,
            );
            let z = d.at(px, py);
            if !(z.is_finite() && z > 0.0) {
                return None;
            }
            Some(unproject_pixel(uv.x, uv.y, z, &traj.intrinsics, traj.pose(t).ok()?))
        };
        for q in 0..scene.dataset.tracks.n_queries() {
            let cover = (0..16).filter(|&t| lift(q, t).is_some()).count();
            let c0 = lift(q, t0);
            let gt = &scene.gt_tracks_3d[q];
            if let Some(c0) = c0 {
                println!(
                    "  track q{q} cl{} cover {cover}/16 lift err t0 {:.3}",
                    scene.track_sources[q] % 2,
                    (c0 - gt[t0]).norm()
                );
            } else {
                println!("  track q{q} cl{} cover {cover}/16 (no canonical lift)", scene.track_sources[q] % 2);
            }
        }
    }

    // Anatomy of the worst query's assignment.
    let worst_q = errs[0].1;
    println!("-- query {worst_q} anatomy --");
    let gt = &scene.gt_tracks_3d[worst_q];
    println!(
        "  gt canonical ({:.3},{:.3},{:.3}), gt disp ({:.3},{:.3},{:.3})",
        gt[t0].x, gt[t0].y, gt[t0].z,
        gt[last].x - gt[t0].x, gt[last].y - gt[t0].y, gt[last].z - gt[t0].z,
    );
    let ordinals = cloud.dynamic_ordinals();
    for &(gi, w) in &assignments.per_query[worst_q] {
        let g = &cloud.gaussians[gi];
        let row = ordinals[gi].unwrap();
        let tf_last =
            splat4d::scene::compose_motion(model.coeffs.row(row, last), &model).unwrap();
        let disp = tf_last.rotation * g.mean + tf_last.translation - g.mean;
        println!(
            "  g{gi} w {:.3} at ({:.3},{:.3},{:.3}) disp ({:.3},{:.3},{:.3})",
            w, g.mean.x, g.mean.y, g.mean.z, disp.x, disp.y, disp.z
        );
    }
}
