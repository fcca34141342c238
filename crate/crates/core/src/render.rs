//! Differentiable software splatting.
//!
//! Forward: project each posed gaussian to a 2D splat (EWA affine
//! approximation), depth-sort globally, bin into tiles, and alpha-composite
//! RGB, depth and accumulated alpha front to back. Depth is the unnormalized
//! sum(T_i a_i z_i); a normalized variant is available for losses.
//!
//! Backward: replay the stored per-pixel contributor lists in reverse,
//! producing analytic gradients for every splat parameter, then chain through
//! the projection (including the Jacobian's own dependence on the camera-frame
//! mean) back to world-space means, rotations, scales, opacities and colors.
//!
//! Both passes parallelize over tiles; per-tile results are merged in a fixed
//! order, so outputs are bitwise identical for any worker count.

use std::collections::HashMap;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::camera::{Extrinsics, Intrinsics};
use crate::error::{Error, Result};
use crate::frame::{RgbFrame, ScalarFrame};
use crate::num::{real, Scalar};
use crate::scene::{sigmoid, PosedCloud, PosedGrads};

/// Near plane for splat culling (camera-frame z).
pub const SPLAT_NEAR: f64 = 0.01;
/// Isotropic floor added to every projected covariance (pixels^2).
pub const COV_FLOOR: f64 = 0.3;

#[derive(Clone, Debug)]
pub struct RenderOptions<T: Scalar> {
    pub tile_size: u32,
    /// Splat support radius in standard deviations of the 2D footprint.
    pub support_sigma: T,
    pub alpha_clamp: T,
    pub transmittance_stop: T,
    /// 0 = use the rayon default; 1 = fully serial.
    pub workers: usize,
    /// Keep the contributor records needed by the backward pass.
    pub keep_aux: bool,
}

impl<T: Scalar> Default for RenderOptions<T> {
    fn default() -> Self {
        RenderOptions {
            tile_size: 16,
            support_sigma: real(7.0),
            alpha_clamp: real(0.99),
            transmittance_stop: real(1e-4),
            workers: 0,
            keep_aux: true,
        }
    }
}

/// One projected gaussian.
#[derive(Clone, Debug)]
pub struct Splat2D<T: Scalar> {
    pub mean2d: Vector2<T>,
    pub cov2d: Matrix2<T>,
    /// Camera-frame z of the mean.
    pub depth: T,
    pub opacity: T,
    pub color: Vector3<T>,
    pub source_index: usize,
    /// Inverse covariance, cached for evaluation.
    pub conic: Matrix2<T>,
    /// Camera-frame mean (needed by the backward chain).
    pub cam: Vector3<T>,
}

/// Project one gaussian of a posed cloud; `None` marks a culled gaussian.
pub fn project_gaussian<T: Scalar>(
    posed: &PosedCloud<T>,
    index: usize,
    k: &Intrinsics<T>,
    e: &Extrinsics<T>,
) -> Option<Splat2D<T>> {
    let cam = e.world_to_camera(&posed.means[index]);
    if cam.z <= real(SPLAT_NEAR) {
        return None;
    }
    let z = cam.z;
    let mean2d = Vector2::new(k.fx * cam.x / z + k.cx, k.fy * cam.y / z + k.cy);

    // World covariance R diag(exp(2s)) R^T rotated into the camera frame.
    let m = camera_frame_covariance(posed, index, e);
    let j = projection_jacobian(k, &cam);
    let mut cov2d = j * m * j.transpose();
    cov2d[(0, 0)] += real(COV_FLOOR);
    cov2d[(1, 1)] += real(COV_FLOOR);

    let conic = cov2d.try_inverse()?;
    Some(Splat2D {
        mean2d,
        cov2d,
        depth: z,
        opacity: sigmoid(posed.opacity_logits[index]),
        color: posed.colors[index],
        source_index: index,
        conic,
        cam,
    })
}

fn camera_frame_covariance<T: Scalar>(
    posed: &PosedCloud<T>,
    index: usize,
    e: &Extrinsics<T>,
) -> Matrix3<T> {
    let r = posed.rotations[index];
    let s2 = posed.log_scales[index].map(|s| (s + s).exp());
    let sigma_world = r * Matrix3::from_diagonal(&s2) * r.transpose();
    let w = e.pose.rotation;
    w * sigma_world * w.transpose()
}

/// 2x3 Jacobian of the perspective projection at a camera-frame point.
fn projection_jacobian<T: Scalar>(k: &Intrinsics<T>, cam: &Vector3<T>) -> Matrix2x3<T> {
    let z = cam.z;
    let z2 = z * z;
    Matrix2x3::new(
        k.fx / z,
        T::zero(),
        -k.fx * cam.x / z2,
        T::zero(),
        k.fy / z,
        -k.fy * cam.y / z2,
    )
}

/// Per-pixel contributor record: (splat array index, alpha).
type Contributor<T> = (u32, T);

/// State retained from a forward pass for the backward pass.
pub struct RenderAux<T: Scalar> {
    pub splats: Vec<Splat2D<T>>,
    contributors: Vec<Vec<Contributor<T>>>,
    posed_rotations: Vec<Matrix3<T>>,
    posed_log_scales: Vec<Vector3<T>>,
    intrinsics: Intrinsics<T>,
    extrinsics: Extrinsics<T>,
    background: Vector3<T>,
    n_gaussians: usize,
    options: RenderOptions<T>,
}

pub struct RenderTarget<T: Scalar> {
    pub rgb: RgbFrame<T>,
    /// Unnormalized alpha-weighted depth sum(T_i a_i z_i).
    pub depth: ScalarFrame<T>,
    pub alpha: ScalarFrame<T>,
    pub aux: Option<RenderAux<T>>,
}

impl<T: Scalar> RenderTarget<T> {
    /// Depth divided by accumulated alpha where alpha exceeds `min_alpha`,
    /// zero elsewhere.
    pub fn normalized_depth(&self, min_alpha: T) -> ScalarFrame<T> {
        let mut out = self.depth.clone();
        for (d, &a) in out.values.iter_mut().zip(self.alpha.values.iter()) {
            *d = if a > min_alpha { *d / a } else { T::zero() };
        }
        out
    }

    /// Depth of the dominant surface per pixel: the contributor with the
    /// largest compositing weight T_i a_i. Zero where accumulated alpha does
    /// not exceed `min_alpha`. Needs the aux records.
    pub fn dominant_depth(&self, min_alpha: T) -> Result<ScalarFrame<T>> {
        let aux = self
            .aux
            .as_ref()
            .ok_or_else(|| Error::Contract("dominant depth needs forward aux records".into()))?;
        let mut out = ScalarFrame::new(self.rgb.width, self.rgb.height, T::zero());
        for (i, list) in aux.contributors.iter().enumerate() {
            if self.alpha.values[i] <= min_alpha {
                continue;
            }
            let mut t_acc = T::one();
            let mut best_w = T::zero();
            for &(si, a) in list {
                let w = t_acc * a;
                if w > best_w {
                    best_w = w;
                    out.values[i] = aux.splats[si as usize].depth;
                }
                t_acc *= T::one() - a;
            }
        }
        Ok(out)
    }
}

struct TileGrid {
    tile_size: u32,
    tiles_x: u32,
}

impl TileGrid {
    fn new(width: u32, height: u32, tile_size: u32) -> (Self, usize) {
        let tiles_x = width.div_ceil(tile_size);
        let tiles_y = height.div_ceil(tile_size);
        (TileGrid { tile_size, tiles_x }, (tiles_x * tiles_y) as usize)
    }

    /// Pixel rectangle of a tile: (x0, y0, x1, y1), exclusive upper bounds.
    fn rect(&self, tile: usize, width: u32, height: u32) -> (u32, u32, u32, u32) {
        let tx = tile as u32 % self.tiles_x;
        let ty = tile as u32 / self.tiles_x;
        let x0 = tx * self.tile_size;
        let y0 = ty * self.tile_size;
        (
            x0,
            y0,
            (x0 + self.tile_size).min(width),
            (y0 + self.tile_size).min(height),
        )
    }
}

/// One splat-index list per tile, from the axis-aligned bounds of each
/// splat's support ellipse.
fn bin_splats<T: Scalar>(
    splats: &[Splat2D<T>],
    grid: &TileGrid,
    n_tiles: usize,
    width: u32,
    height: u32,
    support_sigma: T,
) -> Vec<Vec<u32>> {
    let mut tiles = vec![Vec::new(); n_tiles];
    let chi2 = support_sigma * support_sigma;
    for (idx, splat) in splats.iter().enumerate() {
        let rx = (chi2 * splat.cov2d[(0, 0)]).sqrt();
        let ry = (chi2 * splat.cov2d[(1, 1)]).sqrt();
        let x_min = (splat.mean2d.x - rx).floor().to_f64().unwrap();
        let y_min = (splat.mean2d.y - ry).floor().to_f64().unwrap();
        let x_max = (splat.mean2d.x + rx).ceil().to_f64().unwrap();
        let y_max = (splat.mean2d.y + ry).ceil().to_f64().unwrap();
        if x_max < 0.0 || y_max < 0.0 || x_min >= width as f64 || y_min >= height as f64 {
            continue;
        }
        let tx0 = (x_min.max(0.0) as u32) / grid.tile_size;
        let ty0 = (y_min.max(0.0) as u32) / grid.tile_size;
        let tx1 = ((x_max.min(width as f64 - 1.0)) as u32) / grid.tile_size;
        let ty1 = ((y_max.min(height as f64 - 1.0)) as u32) / grid.tile_size;
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                tiles[(ty * grid.tiles_x + tx) as usize].push(idx as u32);
            }
        }
    }
    tiles
}

struct TileOutput<T: Scalar> {
    rgb: Vec<Vector3<T>>,
    depth: Vec<T>,
    alpha: Vec<T>,
    contributors: Vec<Vec<Contributor<T>>>,
}

/// Render a posed cloud through one camera.
pub fn render<T: Scalar>(
    posed: &PosedCloud<T>,
    k: &Intrinsics<T>,
    e: &Extrinsics<T>,
    background: Vector3<T>,
    options: &RenderOptions<T>,
) -> Result<RenderTarget<T>> {
    if posed.is_empty() {
        return Err(Error::InvalidArgument("cannot render an empty cloud".into()));
    }
    let (width, height) = (k.width, k.height);

    let mut splats: Vec<Splat2D<T>> = (0..posed.len())
        .filter_map(|i| project_gaussian(posed, i, k, e))
        .collect();
    // Global front-to-back order; the sort is stable, ties keep index order.
    splats.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap());

    let (grid, n_tiles) = TileGrid::new(width, height, options.tile_size);
    let tile_lists = bin_splats(&splats, &grid, n_tiles, width, height, options.support_sigma);
    let chi2_cut = options.support_sigma * options.support_sigma;

    let run_tile = |tile: usize| -> TileOutput<T> {
        let (x0, y0, x1, y1) = grid.rect(tile, width, height);
        let npix = ((x1 - x0) * (y1 - y0)) as usize;
        let mut out = TileOutput {
            rgb: vec![background; npix],
            depth: vec![T::zero(); npix],
            alpha: vec![T::zero(); npix],
            contributors: if options.keep_aux {
                vec![Vec::new(); npix]
            } else {
                Vec::new()
            },
        };
        let list = &tile_lists[tile];
        let mut p = 0usize;
        for y in y0..y1 {
            for x in x0..x1 {
                let pix = Vector2::new(real::<T>(x as f64), real::<T>(y as f64));
                let mut t_acc = T::one();
                let mut rgb = Vector3::zeros();
                let mut depth = T::zero();
                let mut alpha_acc = T::zero();
                for &si in list {
                    let s = &splats[si as usize];
                    let d = pix - s.mean2d;
                    let chi2 = s.conic[(0, 0)] * d.x * d.x
                        + (s.conic[(0, 1)] + s.conic[(1, 0)]) * d.x * d.y
                        + s.conic[(1, 1)] * d.y * d.y;
                    if chi2 > chi2_cut {
                        continue;
                    }
                    let g = (-chi2 * real::<T>(0.5)).exp();
                    let a = (s.opacity * g).min(options.alpha_clamp);
                    rgb += s.color * (t_acc * a);
                    depth += s.depth * (t_acc * a);
                    alpha_acc += t_acc * a;
                    if options.keep_aux {
                        out.contributors[p].push((si, a));
                    }
                    t_acc *= T::one() - a;
                    if t_acc < options.transmittance_stop {
                        break;
                    }
                }
                out.rgb[p] = rgb + background * t_acc;
                out.depth[p] = depth;
                out.alpha[p] = alpha_acc;
                p += 1;
            }
        }
        out
    };

    let tile_outputs: Vec<TileOutput<T>> = if options.workers == 1 {
        (0..n_tiles).map(run_tile).collect()
    } else {
        (0..n_tiles).into_par_iter().map(run_tile).collect()
    };

    let mut rgb = RgbFrame::new(width, height, background);
    let mut depth = ScalarFrame::new(width, height, T::zero());
    let mut alpha = ScalarFrame::new(width, height, T::zero());
    let mut contributors = if options.keep_aux {
        vec![Vec::new(); (width * height) as usize]
    } else {
        Vec::new()
    };
    for (tile, mut out) in tile_outputs.into_iter().enumerate() {
        let (x0, y0, x1, y1) = grid.rect(tile, width, height);
        let mut p = 0usize;
        for y in y0..y1 {
            for x in x0..x1 {
                *rgb.at_mut(x, y) = out.rgb[p];
                *depth.at_mut(x, y) = out.depth[p];
                *alpha.at_mut(x, y) = out.alpha[p];
                if options.keep_aux {
                    contributors[(y * width + x) as usize] =
                        std::mem::take(&mut out.contributors[p]);
                }
                p += 1;
            }
        }
    }

    let aux = options.keep_aux.then(|| RenderAux {
        splats,
        contributors,
        posed_rotations: posed.rotations.clone(),
        posed_log_scales: posed.log_scales.clone(),
        intrinsics: *k,
        extrinsics: *e,
        background,
        n_gaussians: posed.len(),
        options: options.clone(),
    });
    Ok(RenderTarget {
        rgb,
        depth,
        alpha,
        aux,
    })
}

/// Upstream gradients for the backward pass, one seed per output channel.
pub struct RenderSeeds<'a, T: Scalar> {
    pub d_rgb: &'a RgbFrame<T>,
    pub d_depth: &'a ScalarFrame<T>,
    pub d_alpha: Option<&'a ScalarFrame<T>>,
}

#[derive(Clone)]
struct SplatAccum<T: Scalar> {
    d_mean2d: Vector2<T>,
    d_cov2d: Matrix2<T>,
    d_opacity: T,
    d_depth: T,
    d_color: Vector3<T>,
}

impl<T: Scalar> SplatAccum<T> {
    fn zero() -> Self {
        SplatAccum {
            d_mean2d: Vector2::zeros(),
            d_cov2d: Matrix2::zeros(),
            d_opacity: T::zero(),
            d_depth: T::zero(),
            d_color: Vector3::zeros(),
        }
    }

    fn add(&mut self, other: &Self) {
        self.d_mean2d += other.d_mean2d;
        self.d_cov2d += other.d_cov2d;
        self.d_opacity += other.d_opacity;
        self.d_depth += other.d_depth;
        self.d_color += other.d_color;
    }
}

/// Analytic gradients of a rendered frame w.r.t. every posed-gaussian
/// parameter. Requires the aux records of the matching forward pass.
pub fn render_backward<T: Scalar>(
    target: &RenderTarget<T>,
    seeds: &RenderSeeds<'_, T>,
) -> Result<PosedGrads<T>> {
    let aux = target
        .aux
        .as_ref()
        .ok_or_else(|| Error::Contract("backward called without forward aux records".into()))?;
    let (width, height) = (target.rgb.width, target.rgb.height);
    if seeds.d_rgb.width != width || seeds.d_rgb.height != height {
        return Err(Error::Contract("rgb seed shape differs from forward".into()));
    }
    if seeds.d_depth.width != width || seeds.d_depth.height != height {
        return Err(Error::Contract("depth seed shape differs from forward".into()));
    }
    if let Some(da) = seeds.d_alpha {
        if da.width != width || da.height != height {
            return Err(Error::Contract("alpha seed shape differs from forward".into()));
        }
    }

    let (grid, n_tiles) = TileGrid::new(width, height, aux.options.tile_size);
    let run_tile = |tile: usize| -> Vec<(u32, SplatAccum<T>)> {
        let (x0, y0, x1, y1) = grid.rect(tile, width, height);
        let mut local: HashMap<u32, SplatAccum<T>> = HashMap::new();
        for y in y0..y1 {
            for x in x0..x1 {
                let list = &aux.contributors[(y * width + x) as usize];
                if list.is_empty() {
                    continue;
                }
                let pix = Vector2::new(real::<T>(x as f64), real::<T>(y as f64));
                let g_rgb = seeds.d_rgb.at(x, y);
                let g_depth = seeds.d_depth.at(x, y);
                let g_alpha = seeds.d_alpha.map(|f| f.at(x, y)).unwrap_or_else(T::zero);

                // Transmittance trace of the forward pass, recomputed.
                let mut trans = Vec::with_capacity(list.len() + 1);
                let mut t_acc = T::one();
                trans.push(t_acc);
                for &(_, a) in list {
                    t_acc *= T::one() - a;
                    trans.push(t_acc);
                }

                // Reverse scan; the background contributes through the final
                // transmittance.
                let mut g_t_next = g_rgb.dot(&aux.background);
                for i in (0..list.len()).rev() {
                    let (si, a) = list[i];
                    let s = &aux.splats[si as usize];
                    let t_i = trans[i];
                    let channel = g_rgb.dot(&s.color) + g_depth * s.depth + g_alpha;
                    let d_a = t_i * channel - g_t_next * t_i;
                    let entry = local.entry(si).or_insert_with(SplatAccum::zero);
                    entry.d_color += g_rgb * (t_i * a);
                    entry.d_depth += g_depth * t_i * a;
                    if a < aux.options.alpha_clamp {
                        // alpha = opacity * exp(-chi2/2)
                        entry.d_opacity += (a / s.opacity) * d_a;
                        let d_sigma = -a * d_a;
                        let d = pix - s.mean2d;
                        let ad = s.conic * d;
                        entry.d_mean2d -= ad * d_sigma;
                        entry.d_cov2d -= ad * ad.transpose() * (d_sigma * real::<T>(0.5));
                    }
                    g_t_next = channel * a + g_t_next * (T::one() - a);
                }
            }
        }
        let mut pairs: Vec<(u32, SplatAccum<T>)> = local.into_iter().collect();
        pairs.sort_by_key(|(si, _)| *si);
        pairs
    };

    let tile_grads: Vec<Vec<(u32, SplatAccum<T>)>> = if aux.options.workers == 1 {
        (0..n_tiles).map(run_tile).collect()
    } else {
        (0..n_tiles).into_par_iter().map(run_tile).collect()
    };

    let mut per_splat = vec![SplatAccum::zero(); aux.splats.len()];
    for tile in tile_grads {
        for (si, accum) in tile {
            per_splat[si as usize].add(&accum);
        }
    }

    // Chain splat-space gradients back to posed world-space parameters.
    let mut grads = PosedGrads::zeros(aux.n_gaussians);
    let k = &aux.intrinsics;
    let w = aux.extrinsics.pose.rotation;
    let ndc = Vector2::new(real::<T>(2.0 / width as f64), real::<T>(2.0 / height as f64));
    for (s, accum) in aux.splats.iter().zip(per_splat.iter()) {
        let gi = s.source_index;
        grads.d_color[gi] += accum.d_color;
        let o = s.opacity;
        grads.d_opacity_logit[gi] += accum.d_opacity * o * (T::one() - o);
        grads.d_mean2d_ndc[gi] +=
            Vector2::new(accum.d_mean2d.x * ndc.x, accum.d_mean2d.y * ndc.y);

        let j = projection_jacobian(k, &s.cam);
        let sym = (accum.d_cov2d + accum.d_cov2d.transpose()) * real::<T>(0.5);

        // Camera-frame covariance M of the source gaussian, rebuilt exactly
        // as the forward pass did.
        let r = aux.posed_rotations[gi];
        let s2 = aux.posed_log_scales[gi].map(|v| (v + v).exp());
        let sigma_world = r * Matrix3::from_diagonal(&s2) * r.transpose();
        let m_cam = w * sigma_world * w.transpose();

        // d(camera-frame mean): projection term, depth channel, and the
        // Jacobian's own dependence on the camera-frame coordinates.
        let mut d_cam = j.transpose() * accum.d_mean2d;
        d_cam.z += accum.d_depth;
        let (x, y, z) = (s.cam.x, s.cam.y, s.cam.z);
        let z2 = z * z;
        let z3 = z2 * z;
        let zero = T::zero();
        let dj = [
            Matrix2x3::new(zero, zero, -k.fx / z2, zero, zero, zero),
            Matrix2x3::new(zero, zero, zero, zero, zero, -k.fy / z2),
            Matrix2x3::new(
                -k.fx / z2,
                zero,
                k.fx * x / z3 * real::<T>(2.0),
                zero,
                -k.fy / z2,
                k.fy * y / z3 * real::<T>(2.0),
            ),
        ];
        let mjt = m_cam * j.transpose();
        for (axis, dj_axis) in dj.iter().enumerate() {
            d_cam[axis] += (sym.component_mul(&(dj_axis * mjt))).sum() * real::<T>(2.0);
        }
        grads.d_mean[gi] += w.transpose() * d_cam;

        // d(world covariance) -> posed rotation matrix and log-scales.
        let d_m = j.transpose() * sym * j;
        let p = w.transpose() * d_m * w;
        let d_diag = Matrix3::from_diagonal(&s2);
        grads.d_rotation[gi] += (p + p.transpose()) * r * d_diag;
        let rtpr = r.transpose() * p * r;
        for kk in 0..3 {
            grads.d_log_scale[gi][kk] += rtpr[(kk, kk)] * s2[kk] * real::<T>(2.0);
        }
    }
    Ok(grads)
}
