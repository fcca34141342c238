//! Central finite-difference validation of the analytic gradients through the
//! full chain: canonical parameters -> motion composition -> posed cloud ->
//! projection -> alpha compositing -> weighted-sum loss.

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use splat4d::camera::{Extrinsics, Intrinsics};
use splat4d::frame::{RgbFrame, ScalarFrame};
use splat4d::render::{render, render_backward, RenderOptions, RenderSeeds};
use splat4d::scene::{
    backward_pose_at_time, logit, pose_at_time, Gaussian, GaussianCloud, MotionModel,
};
use splat4d::se3::Twist;

const EPS: f64 = 1e-4;
const REL_TOL: f64 = 1e-3;

struct Fixture {
    cloud: GaussianCloud<f64>,
    model: MotionModel<f64>,
    k: Intrinsics<f64>,
    e: Extrinsics<f64>,
    background: Vector3<f64>,
    w_rgb: RgbFrame<f64>,
    w_depth: ScalarFrame<f64>,
    w_alpha: ScalarFrame<f64>,
    frame: usize,
}

/// Scene crafted so no clamp/stop boundary is near active: opacities stay
/// below 0.75 and depths are well separated so the global sort is stable
/// under the finite-difference perturbations.
fn build_fixture(rng: &mut impl Rng, n_gaussians: usize, frame: usize) -> Fixture {
    let mut gaussians = Vec::new();
    let mut mask = Vec::new();
    for i in 0..n_gaussians {
        let q = {
            let v = Vector4::new(
                1.0,
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
            );
            v / v.norm()
        };
        gaussians.push(Gaussian {
            mean: Vector3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                2.0 + 0.5 * i as f64 + rng.gen_range(0.0..0.1),
            ),
            rot: q,
            log_scale: Vector3::new(
                rng.gen_range(-2.8..-1.8),
                rng.gen_range(-2.8..-1.8),
                rng.gen_range(-2.8..-1.8),
            ),
            opacity_logit: logit(rng.gen_range(0.2..0.75)),
            color: Vector3::new(
                rng.gen_range(0.1..0.9),
                rng.gen_range(0.1..0.9),
                rng.gen_range(0.1..0.9),
            ),
        });
        // Mixed static/dynamic population; at least one of each when n >= 2.
        mask.push(i % 3 != 1);
    }
    let cloud = GaussianCloud::new(gaussians, mask).unwrap();

    let frames = 3;
    let mut model = MotionModel::new(cloud.n_dynamic(), frames, 8, 0, rng.gen()).unwrap();
    for tw in model.trainable.iter_mut() {
        tw.omega = Vector3::new(
            rng.gen_range(-0.2..0.2),
            rng.gen_range(-0.2..0.2),
            rng.gen_range(-0.2..0.2),
        );
        tw.v = Vector3::new(
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.3..0.3),
        );
    }
    for d in 0..cloud.n_dynamic() {
        for t in 0..frames {
            for b in 0..8 {
                model.coeffs.row_mut(d, t)[b] = rng.gen_range(-0.1..0.1);
            }
        }
    }

    let (w, h) = (24u32, 24u32);
    let k = Intrinsics::new(30.0, 28.0, 12.0, 12.0, w, h).unwrap();
    let e = Extrinsics::new(
        splat4d::se3::exp(&Twist::new(
            Vector3::new(0.02, -0.03, 0.01),
            Vector3::new(0.05, -0.02, 0.1),
        ))
        .unwrap(),
    );

    let mut w_rgb = RgbFrame::new(w, h, Vector3::zeros());
    let mut w_depth = ScalarFrame::new(w, h, 0.0);
    let mut w_alpha = ScalarFrame::new(w, h, 0.0);
    for p in w_rgb.pixels.iter_mut() {
        *p = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
    }
    for v in w_depth.values.iter_mut() {
        *v = rng.gen_range(-0.5..0.5);
    }
    for v in w_alpha.values.iter_mut() {
        *v = rng.gen_range(-0.5..0.5);
    }

    Fixture {
        cloud,
        model,
        k,
        e,
        background: Vector3::new(0.15, 0.25, 0.35),
        w_rgb,
        w_depth,
        w_alpha,
        frame,
    }
}

fn loss_of(f: &Fixture, cloud: &GaussianCloud<f64>, model: &MotionModel<f64>) -> f64 {
    let posed = pose_at_time(cloud, model, f.frame).unwrap();
    let mut opts = RenderOptions::default();
    opts.keep_aux = false;
    opts.workers = 1;
    let target = render(&posed, &f.k, &f.e, f.background, &opts).unwrap();
    let mut total = 0.0;
    for (p, w) in target.rgb.pixels.iter().zip(f.w_rgb.pixels.iter()) {
        total += p.dot(w);
    }
    for (d, w) in target.depth.values.iter().zip(f.w_depth.values.iter()) {
        total += d * w;
    }
    for (a, w) in target.alpha.values.iter().zip(f.w_alpha.values.iter()) {
        total += a * w;
    }
    total
}

fn analytic_grads(f: &Fixture) -> splat4d::scene::CanonicalGrads<f64> {
    let posed = pose_at_time(&f.cloud, &f.model, f.frame).unwrap();
    let mut opts = RenderOptions::default();
    opts.workers = 1;
    let target = render(&posed, &f.k, &f.e, f.background, &opts).unwrap();
    let posed_grads = render_backward(
        &target,
        &RenderSeeds {
            d_rgb: &f.w_rgb,
            d_depth: &f.w_depth,
            d_alpha: Some(&f.w_alpha),
        },
    )
    .unwrap();
    backward_pose_at_time(&f.cloud, &f.model, f.frame, &posed_grads).unwrap()
}

fn check(label: &str, analytic: f64, fd: f64, failures: &mut Vec<String>) {
    let denom = analytic.abs().max(fd.abs()).max(1e-5);
    let rel = (analytic - fd).abs() / denom;
    if rel >= REL_TOL {
        failures.push(format!(
            "{label}: analytic {analytic:.8e} vs fd {fd:.8e} (rel {rel:.2e})"
        ));
    }
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(777);
    let mut failures = Vec::new();
    for scene in 0..20 {
        let frame = scene % 3;
        let f = build_fixture(&mut rng, 5, frame);
        let grads = analytic_grads(&f);

        // Canonical per-gaussian parameters.
        for i in 0..f.cloud.len() {
            for axis in 0..3 {
                let mut plus = f.cloud.clone();
                plus.gaussians[i].mean[axis] += EPS;
                let mut minus = f.cloud.clone();
                minus.gaussians[i].mean[axis] -= EPS;
                let fd = (loss_of(&f, &plus, &f.model) - loss_of(&f, &minus, &f.model)) / (2.0 * EPS);
                check(
                    &format!("scene {scene} g{i} mean[{axis}]"),
                    grads.d_mean[i][axis],
                    fd,
                    &mut failures,
                );
            }
            for q in 0..4 {
                let mut plus = f.cloud.clone();
                plus.gaussians[i].rot[q] += EPS;
                let mut minus = f.cloud.clone();
                minus.gaussians[i].rot[q] -= EPS;
                let fd = (loss_of(&f, &plus, &f.model) - loss_of(&f, &minus, &f.model)) / (2.0 * EPS);
                check(
                    &format!("scene {scene} g{i} rot[{q}]"),
                    grads.d_rot[i][q],
                    fd,
                    &mut failures,
                );
            }
            for axis in 0..3 {
                let mut plus = f.cloud.clone();
                plus.gaussians[i].log_scale[axis] += EPS;
                let mut minus = f.cloud.clone();
                minus.gaussians[i].log_scale[axis] -= EPS;
                let fd = (loss_of(&f, &plus, &f.model) - loss_of(&f, &minus, &f.model)) / (2.0 * EPS);
                check(
                    &format!("scene {scene} g{i} log_scale[{axis}]"),
                    grads.d_log_scale[i][axis],
                    fd,
                    &mut failures,
                );
            }
            {
                let mut plus = f.cloud.clone();
                plus.gaussians[i].opacity_logit += EPS;
                let mut minus = f.cloud.clone();
                minus.gaussians[i].opacity_logit -= EPS;
                let fd = (loss_of(&f, &plus, &f.model) - loss_of(&f, &minus, &f.model)) / (2.0 * EPS);
                check(
                    &format!("scene {scene} g{i} opacity"),
                    grads.d_opacity_logit[i],
                    fd,
                    &mut failures,
                );
            }
            for axis in 0..3 {
                let mut plus = f.cloud.clone();
                plus.gaussians[i].color[axis] += EPS;
                let mut minus = f.cloud.clone();
                minus.gaussians[i].color[axis] -= EPS;
                let fd = (loss_of(&f, &plus, &f.model) - loss_of(&f, &minus, &f.model)) / (2.0 * EPS);
                check(
                    &format!("scene {scene} g{i} color[{axis}]"),
                    grads.d_color[i][axis],
                    fd,
                    &mut failures,
                );
            }
        }

        // Motion coefficients at the rendered frame.
        let b_count = f.model.basis_count();
        for d in 0..f.cloud.n_dynamic() {
            for b in 0..b_count {
                let mut plus = f.model.clone();
                plus.coeffs.row_mut(d, f.frame)[b] += EPS;
                let mut minus = f.model.clone();
                minus.coeffs.row_mut(d, f.frame)[b] -= EPS;
                let fd = (loss_of(&f, &f.cloud, &plus) - loss_of(&f, &f.cloud, &minus)) / (2.0 * EPS);
                check(
                    &format!("scene {scene} coeff[{d},{b}]"),
                    grads.d_coeffs_frame[d * b_count + b],
                    fd,
                    &mut failures,
                );
            }
        }

        // Trainable bases (omega then v components).
        for j in 0..f.model.trainable.len() {
            for comp in 0..6 {
                let bump = |m: &MotionModel<f64>, delta: f64| {
                    let mut m = m.clone();
                    let mut arr = m.trainable[j].to_array();
                    arr[comp] += delta;
                    m.trainable[j] = Twist::from_array(arr);
                    m
                };
                let fd = (loss_of(&f, &f.cloud, &bump(&f.model, EPS))
                    - loss_of(&f, &f.cloud, &bump(&f.model, -EPS)))
                    / (2.0 * EPS);
                let analytic = grads.d_trainable[j].to_array()[comp];
                check(
                    &format!("scene {scene} basis[{j}][{comp}]"),
                    analytic,
                    fd,
                    &mut failures,
                );
            }
        }
    }

    assert!(
        failures.is_empty(),
        "{} gradient mismatches:\n{}",
        failures.len(),
        failures.join("\n")
    );
}
