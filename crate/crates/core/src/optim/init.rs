//! Scene initialization: depth-lifted gaussians at the canonical frame and
//! k-means motion clusters from lifted 2D tracks.

use std::collections::HashMap;

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{unproject_pixel, CameraTrajectory};
use crate::dataio::SceneDataset;
use crate::error::{Error, Result};
use crate::scene::{logit, Gaussian, GaussianCloud, MotionModel};
use crate::se3::Twist;
use crate::tracks::TrackSet;
use crate::Real;

/// Mean distance to the `k` nearest other points, via a uniform grid for
/// large clouds and brute force for small ones.
pub fn mean_knn_distance(points: &[Vector3<Real>], k: usize) -> Vec<Real> {
    let n = points.len();
    if n <= 1 {
        return vec![0.1; n];
    }
    let k = k.min(n - 1);
    if n <= 2000 {
        let mut out = Vec::with_capacity(n);
        let mut dists = Vec::with_capacity(n - 1);
        for (i, p) in points.iter().enumerate() {
            dists.clear();
            for (j, q) in points.iter().enumerate() {
                if i != j {
                    dists.push((p - q).norm());
                }
            }
            dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
            out.push(dists[..k].iter().sum::<Real>() / k as Real);
        }
        return out;
    }

    // Grid with roughly one point per cell.
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        for c in 0..3 {
            lo[c] = lo[c].min(p[c]);
            hi[c] = hi[c].max(p[c]);
        }
    }
    let extent = (hi - lo).norm().max(1e-9);
    let h = extent / (n as Real).cbrt().max(1.0);
    let cell = |p: &Vector3<Real>| -> (i64, i64, i64) {
        (
            ((p.x - lo.x) / h).floor() as i64,
            ((p.y - lo.y) / h).floor() as i64,
            ((p.z - lo.z) / h).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(cell(p)).or_default().push(i as u32);
    }

    let mut out = Vec::with_capacity(n);
    for (i, p) in points.iter().enumerate() {
        let c = cell(p);
        let mut best: Vec<Real> = Vec::new();
        let mut radius = 1i64;
        loop {
            best.clear();
            for dz in -radius..=radius {
                for dy in -radius..=radius {
                    for dx in -radius..=radius {
                        if let Some(ids) = grid.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) {
                            for &j in ids {
                                if j as usize != i {
                                    best.push((p - points[j as usize]).norm());
                                }
                            }
                        }
                    }
                }
            }
            if best.len() >= k {
                best.sort_by(|a, b| a.partial_cmp(b).unwrap());
                // Safe only if the k-th distance is covered by the searched
                // radius; otherwise grow the shell.
                if best[k - 1] <= radius as Real * h || radius > 64 {
                    break;
                }
            }
            radius += 1;
            if radius > 64 {
                break;
            }
        }
        if best.len() < k {
            // Degenerate cloud; fall back to brute force for this point.
            best = points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| (p - q).norm())
                .collect();
            best.sort_by(|a, b| a.partial_cmp(b).unwrap());
        }
        out.push(best[..k].iter().sum::<Real>() / k as Real);
    }
    out
}

/// Back-project the canonical frame's depth map into world points and sample
/// `n` gaussians from them. Everything is dynamic unless a mask marks the
/// static background.
pub fn init_cloud(
    dataset: &SceneDataset,
    canonical_frame: usize,
    n: usize,
    seed: u64,
) -> Result<GaussianCloud<Real>> {
    let rgb = dataset
        .frames
        .get(canonical_frame)
        .ok_or_else(|| Error::InvalidArgument("canonical frame has no image".into()))?;
    let depth = dataset
        .depths
        .get(canonical_frame)
        .ok_or_else(|| Error::InvalidArgument("canonical frame has no depth".into()))?;
    let k = &dataset.trajectory.intrinsics;
    let pose = dataset.trajectory.pose(canonical_frame)?;

    let mut candidates: Vec<(u32, u32, Real)> = Vec::new();
    for y in 0..depth.height {
        for x in 0..depth.width {
            let z = depth.at(x, y);
            if z.is_finite() && z > 0.0 {
                candidates.push((x, y, z));
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::InvalidArgument(
            "canonical depth map has no valid pixels".into(),
        ));
    }
    // More gaussians than valid pixels: clamp to the pixel count.
    let n = n.min(candidates.len()).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = rand::seq::index::sample(&mut rng, candidates.len(), n).into_vec();
    chosen.sort_unstable();

    let mut means = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    let mut dynamic = Vec::with_capacity(n);
    let mask = dataset.masks.as_ref().map(|m| &m[canonical_frame]);
    for &ci in &chosen {
        let (x, y, z) = candidates[ci];
        means.push(unproject_pixel(x as Real, y as Real, z, k, pose));
        colors.push(rgb.at(x, y));
        dynamic.push(match mask {
            Some(m) => m.at(x, y) > 0.5,
            None => true,
        });
    }

    let spacing = mean_knn_distance(&means, 3);
    let gaussians = means
        .into_iter()
        .zip(colors)
        .zip(spacing)
        .map(|((mean, color), d)| {
            let s = d.max(1e-5).min(900.0).ln();
            Gaussian {
                mean,
                rot: Vector4::new(1.0, 0.0, 0.0, 0.0),
                log_scale: Vector3::new(s, s, s),
                opacity_logit: logit(0.1),
                color: color.map(|c| c.clamp(0.0, 1.0)),
            }
        })
        .collect();
    GaussianCloud::new(gaussians, dynamic)
}

/// Plain Lloyd k-means with seeded k-means++ initialization.
/// Returns (centers, assignment).
pub fn kmeans(features: &[Vec<Real>], k: usize, seed: u64) -> (Vec<Vec<Real>>, Vec<usize>) {
    assert!(k >= 1 && !features.is_empty());
    let dim = features[0].len();
    let n = features.len();
    let k = k.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let dist2 = |a: &[Real], b: &[Real]| -> Real {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
    };

    // k-means++ seeding.
    let mut centers: Vec<Vec<Real>> = Vec::with_capacity(k);
    centers.push(features[rng.gen_range(0..n)].clone());
    while centers.len() < k {
        let weights: Vec<Real> = features
            .iter()
            .map(|f| {
                centers
                    .iter()
                    .map(|c| dist2(f, c))
                    .fold(Real::INFINITY, Real::min)
            })
            .collect();
        let total: Real = weights.iter().sum();
        if total <= 0.0 {
            centers.push(features[rng.gen_range(0..n)].clone());
            continue;
        }
        let mut pick = rng.gen_range(0.0..total);
        let mut idx = 0;
        for (i, w) in weights.iter().enumerate() {
            pick -= w;
            if pick <= 0.0 {
                idx = i;
                break;
            }
        }
        centers.push(features[idx].clone());
    }

    let mut assign = vec![0usize; n];
    for _ in 0..50 {
        let mut changed = false;
        for (i, f) in features.iter().enumerate() {
            let mut best = (0usize, Real::INFINITY);
            for (j, c) in centers.iter().enumerate() {
                let d = dist2(f, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            if assign[i] != best.0 {
                assign[i] = best.0;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, f) in features.iter().enumerate() {
            counts[assign[i]] += 1;
            for d in 0..dim {
                sums[assign[i]][d] += f[d];
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                // Re-seed an empty cluster at the point farthest from its center.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        dist2(&features[a], &centers[assign[a]])
                            .partial_cmp(&dist2(&features[b], &centers[assign[b]]))
                            .unwrap()
                    })
                    .unwrap();
                centers[j] = features[far].clone();
                changed = true;
            } else {
                for d in 0..dim {
                    centers[j][d] = sums[j][d] / counts[j] as Real;
                }
            }
        }
        if !changed {
            break;
        }
    }
    (centers, assign)
}

/// Lift 2D tracks to 3D through the depth maps and shared cameras, cluster
/// their displacement profiles, and use the clusters to seed the trainable
/// bases and coefficients. Falls back to the zero initialization when fewer
/// than `basis_count - 6` tracks are usable.
#[allow(clippy::too_many_arguments)]
pub fn init_motion(
    tracks: &TrackSet,
    depths: &[crate::frame::ScalarFrame<Real>],
    trajectory: &CameraTrajectory<Real>,
    basis_count: usize,
    cloud: &GaussianCloud<Real>,
    canonical_frame: usize,
    seed: u64,
) -> Result<MotionModel<Real>> {
    let frames = trajectory.len();
    let mut model = MotionModel::new(cloud.n_dynamic(), frames, basis_count, canonical_frame, seed)?;
    let k_clusters = basis_count - 6;
    if k_clusters == 0 {
        return Ok(model);
    }

    // Lift tracks: world point per (query, frame) where depth is available.
    let lift = |q: usize, t: usize| -> Option<Vector3<Real>> {
        if !tracks.is_visible(q, t) {
            return None;
        }
        let uv = tracks.position(q, t);
        let depth = &depths[t];
        let (px, py) = (
            (uv.x.round() as i64).clamp(0, depth.width as i64 - 1) as u32,
            (uv.y.round() as i64).clamp(0, depth.height as i64 - 1) as u32,
        );
        let z = depth.at(px, py);
        if !(z.is_finite() && z > 0.0) {
            return None;
        }
        Some(unproject_pixel(
            uv.x,
            uv.y,
            z,
            &trajectory.intrinsics,
            trajectory.pose(t).ok()?,
        ))
    };

    struct Lifted {
        canonical: Vector3<Real>,
        /// Exact lifts where the track is visible with valid depth.
        raw: Vec<Option<Vector3<Real>>>,
        /// Gaps filled with the nearest liftable frame's displacement.
        held: Vec<Vector3<Real>>,
    }
    let mut lifted: Vec<Lifted> = Vec::new();
    for q in 0..tracks.n_queries() {
        let Some(canonical) = lift(q, canonical_frame) else {
            continue;
        };
        let raw: Vec<Option<Vector3<Real>>> =
            (0..frames).map(|t| lift(q, t).map(|p| p - canonical)).collect();
        let held = (0..frames)
            .map(|t| {
                if let Some(d) = raw[t] {
                    return d;
                }
                let mut best: Option<(usize, Vector3<Real>)> = None;
                for (s, d) in raw.iter().enumerate() {
                    if let Some(d) = d {
                        let dist = t.abs_diff(s);
                        if best.map_or(true, |(b, _)| dist < b) {
                            best = Some((dist, *d));
                        }
                    }
                }
                best.map(|(_, d)| d).unwrap_or_else(Vector3::zeros)
            })
            .collect();
        lifted.push(Lifted {
            canonical,
            raw,
            held,
        });
    }

    // Tracks occluded through stretches of the clip carry stale held values
    // that would seed phantom low-motion clusters. Clustering wants tracks
    // that cover the clip ends and at least 80% of frames; when too few
    // qualify, fall back to the best-covered ones.
    let coverage = |l: &Lifted| l.raw.iter().filter(|d| d.is_some()).count();
    let clean = |l: &Lifted| {
        l.raw[0].is_some() && l.raw[frames - 1].is_some() && coverage(l) * 10 >= frames * 8
    };
    if lifted.iter().filter(|l| clean(l)).count() >= k_clusters {
        lifted.retain(clean);
    } else {
        lifted.sort_by_key(|l| std::cmp::Reverse(coverage(l)));
    }

    if lifted.len() < k_clusters {
        log::warn!(
            "only {} usable tracks for {} motion clusters; coefficients stay zero-initialized",
            lifted.len(),
            k_clusters
        );
        return Ok(model);
    }

    let features: Vec<Vec<Real>> = lifted
        .iter()
        .map(|l| l.held.iter().flat_map(|d| [d.x, d.y, d.z]).collect())
        .collect();
    let (_, assign) = kmeans(&features, k_clusters, seed);

    // Cluster centers in the canonical frame. Per-frame mean displacement
    // averages the exact lifts of the members visible at that frame, falling
    // back to held values when nobody is.
    let mut center = vec![Vector3::<Real>::zeros(); k_clusters];
    let mut counts = vec![0usize; k_clusters];
    let mut mean_disp = vec![vec![Vector3::<Real>::zeros(); frames]; k_clusters];
    for (l, &a) in lifted.iter().zip(assign.iter()) {
        center[a] += l.canonical;
        counts[a] += 1;
    }
    for j in 0..k_clusters {
        if counts[j] == 0 {
            continue;
        }
        center[j] /= counts[j] as Real;
        for t in 0..frames {
            let mut sum = Vector3::zeros();
            let mut n_raw = 0usize;
            for (l, &a) in lifted.iter().zip(assign.iter()) {
                if a == j {
                    if let Some(d) = l.raw[t] {
                        sum += d;
                        n_raw += 1;
                    }
                }
            }
            mean_disp[j][t] = if n_raw > 0 {
                sum / n_raw as Real
            } else {
                let mut held = Vector3::zeros();
                for (l, &a) in lifted.iter().zip(assign.iter()) {
                    if a == j {
                        held += l.held[t];
                    }
                }
                held / counts[j] as Real
            };
        }
    }

    // Decay length: median nearest-neighbor distance among the lifted
    // canonical points. This is the local point spacing, so the cluster
    // weighting is near-hard at inter-cluster range.
    let tau = {
        let mut nn = Vec::with_capacity(lifted.len());
        for i in 0..lifted.len() {
            let mut best = Real::INFINITY;
            for j in 0..lifted.len() {
                if i != j {
                    best = best.min((lifted[i].canonical - lifted[j].canonical).norm());
                }
            }
            nn.push(best);
        }
        nn.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if nn.is_empty() || nn[nn.len() / 2] <= 1e-9 {
            1.0
        } else {
            nn[nn.len() / 2]
        }
    };

    // Seed trainable translations with each cluster's dominant displacement
    // direction. Coefficients decay with canonical distance to the cluster
    // centers, normalized across clusters, and carry the per-frame
    // displacement magnitude.
    let live: Vec<usize> = (0..k_clusters).filter(|&j| counts[j] > 0).collect();
    let mut direction = vec![Vector3::<Real>::zeros(); k_clusters];
    for &j in &live {
        let (mut peak_t, mut peak) = (canonical_frame, 0.0);
        for (t, d) in mean_disp[j].iter().enumerate() {
            if d.norm() > peak {
                peak = d.norm();
                peak_t = t;
            }
        }
        if peak < 1e-9 {
            continue; // static cluster: leave the default basis, zero coefficients
        }
        direction[j] = mean_disp[j][peak_t] / peak;
        model.trainable[j] = Twist::new(Vector3::zeros(), direction[j]);
    }

    if std::env::var("SPLAT4D_DEBUG_INIT").is_ok() {
        eprintln!("tau {tau:.4}, {} clusters from {} tracks", live.len(), lifted.len());
        for &j in &live {
            let mag_last = mean_disp[j][frames - 1].norm();
            eprintln!(
                "  cluster {j}: {} members, center ({:.3},{:.3},{:.3}), dir ({:.2},{:.2},{:.2}), |disp(F-1)| {:.4}",
                counts[j], center[j].x, center[j].y, center[j].z,
                direction[j].x, direction[j].y, direction[j].z, mag_last
            );
        }
    }

    let ordinals = cloud.dynamic_ordinals();
    for (gi, g) in cloud.gaussians.iter().enumerate() {
        let Some(row) = ordinals[gi] else { continue };
        let raw: Vec<(usize, Real)> = live
            .iter()
            .map(|&j| (j, (-(g.mean - center[j]).norm() / tau).exp()))
            .collect();
        let total: Real = raw.iter().map(|(_, w)| w).sum();
        if total <= 0.0 {
            continue;
        }
        for (j, w) in raw {
            if direction[j].norm() < 0.5 {
                continue;
            }
            let weight = w / total;
            for t in 0..frames {
                let magnitude = mean_disp[j][t].dot(&direction[j]);
                model.coeffs.row_mut(row, t)[6 + j] = weight * magnitude;
            }
        }
    }
    Ok(model)
}
