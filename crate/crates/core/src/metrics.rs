//! PSNR and SSIM on [0,1] RGB frames, with an analytic SSIM gradient for the
//! photometric loss.
//!
//! SSIM uses the standard 11x11 Gaussian window (sigma 1.5), constants
//! C1 = 0.01^2 and C2 = 0.03^2, evaluated on the valid region where the full
//! window fits, averaged over pixels and channels.

use crate::error::{Error, Result};
use crate::frame::RgbFrame;
use crate::Real;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Peak signal-to-noise ratio in dB, capped at 100 for identical images.
pub fn psnr(a: &RgbFrame<Real>, b: &RgbFrame<Real>) -> Result<Real> {
    a.same_shape(b)?;
    let n = a.pixels.len() * 3;
    let mut mse = 0.0;
    for (pa, pb) in a.pixels.iter().zip(b.pixels.iter()) {
        let d = pa - pb;
        mse += d.norm_squared();
    }
    mse /= n as Real;
    if mse < 1e-10 {
        return Ok(100.0);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

fn gaussian_kernel() -> [Real; SSIM_WINDOW * SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as isize;
    let mut sum = 0.0;
    for dy in -half..=half {
        for dx in -half..=half {
            let w = (-((dx * dx + dy * dy) as Real) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            k[((dy + half) * SSIM_WINDOW as isize + dx + half) as usize] = w;
            sum += w;
        }
    }
    for w in k.iter_mut() {
        *w /= sum;
    }
    k
}

/// Mean SSIM over channels and valid pixels.
pub fn ssim(a: &RgbFrame<Real>, b: &RgbFrame<Real>) -> Result<Real> {
    Ok(ssim_with_grad(a, b)?.0)
}

/// Mean SSIM plus its gradient w.r.t. the first image.
pub fn ssim_with_grad(a: &RgbFrame<Real>, b: &RgbFrame<Real>) -> Result<(Real, RgbFrame<Real>)> {
    a.same_shape(b)?;
    let (w, h) = (a.width as usize, a.height as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "image {w}x{h} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let kernel = gaussian_kernel();
    let half = SSIM_WINDOW / 2;
    let (vw, vh) = (w - 2 * half, h - 2 * half);
    let n_valid = (vw * vh * 3) as Real;

    let mut total = 0.0;
    let mut grad = RgbFrame::new(a.width, a.height, nalgebra::Vector3::zeros());

    for ch in 0..3 {
        let plane =
            |img: &RgbFrame<Real>, x: usize, y: usize| -> Real { img.pixels[y * w + x][ch] };

        // Per-valid-pixel scatter fields.
        let mut f_mu = vec![0.0; vw * vh];
        let mut f_gxx = vec![0.0; vw * vh];
        let mut f_gxy = vec![0.0; vw * vh];

        for vy in 0..vh {
            for vx in 0..vw {
                let (cx, cy) = (vx + half, vy + half);
                let (mut mu_x, mut mu_y, mut gxx, mut gyy, mut gxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for ky in 0..SSIM_WINDOW {
                    for kx in 0..SSIM_WINDOW {
                        let wgt = kernel[ky * SSIM_WINDOW + kx];
                        let xv = plane(a, cx + kx - half, cy + ky - half);
                        let yv = plane(b, cx + kx - half, cy + ky - half);
                        mu_x += wgt * xv;
                        mu_y += wgt * yv;
                        gxx += wgt * xv * xv;
                        gyy += wgt * yv * yv;
                        gxy += wgt * xv * yv;
                    }
                }
                let sig_x = gxx - mu_x * mu_x;
                let sig_y = gyy - mu_y * mu_y;
                let sig_xy = gxy - mu_x * mu_y;
                let a1 = 2.0 * mu_x * mu_y + SSIM_C1;
                let b1 = mu_x * mu_x + mu_y * mu_y + SSIM_C1;
                let a2 = 2.0 * sig_xy + SSIM_C2;
                let b2 = sig_x + sig_y + SSIM_C2;
                let l = a1 / b1;
                let cs = a2 / b2;
                total += l * cs;

                // Partials w.r.t. the filtered fields (mu_x, G_xx, G_xy).
                let ds_dgxx = -l * a2 / (b2 * b2);
                let ds_dgxy = l * 2.0 / b2;
                let ds_dmu = cs * (2.0 * mu_y * b1 - 2.0 * mu_x * a1) / (b1 * b1)
                    + ds_dgxx * (-2.0 * mu_x)
                    + ds_dgxy * (-mu_y);
                let idx = vy * vw + vx;
                f_mu[idx] = ds_dmu / n_valid;
                f_gxx[idx] = ds_dgxx / n_valid;
                f_gxy[idx] = ds_dgxy / n_valid;
            }
        }

        // Adjoint of the window filtering: scatter each valid pixel's field
        // values back over its window.
        for vy in 0..vh {
            for vx in 0..vw {
                let idx = vy * vw + vx;
                let (fm, fxx, fxy) = (f_mu[idx], f_gxx[idx], f_gxy[idx]);
                if fm == 0.0 && fxx == 0.0 && fxy == 0.0 {
                    continue;
                }
                let (cx, cy) = (vx + half, vy + half);
                for ky in 0..SSIM_WINDOW {
                    for kx in 0..SSIM_WINDOW {
                        let wgt = kernel[ky * SSIM_WINDOW + kx];
                        let (px, py) = (cx + kx - half, cy + ky - half);
                        let xv = plane(a, px, py);
                        let yv = plane(b, px, py);
                        grad.pixels[py * w + px][ch] +=
                            wgt * (fm + 2.0 * xv * fxx + yv * fxy);
                    }
                }
            }
        }
    }

    Ok((total / n_valid, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(rng: &mut impl Rng, w: u32, h: u32) -> RgbFrame<Real> {
        let mut f = RgbFrame::new(w, h, Vector3::zeros());
        for p in f.pixels.iter_mut() {
            *p = Vector3::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        }
        f
    }

    #[test]
    fn psnr_trivials() {
        let a = RgbFrame::new(8, 8, Vector3::new(0.5, 0.5, 0.5));
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);

        let zero = RgbFrame::new(8, 8, Vector3::zeros());
        let tenth = RgbFrame::new(8, 8, Vector3::new(0.1, 0.1, 0.1));
        assert!((psnr(&zero, &tenth).unwrap() - 20.0).abs() < 1e-12);

        let other = RgbFrame::new(4, 4, Vector3::zeros());
        assert!(psnr(&zero, &other).is_err());
    }

    #[test]
    fn psnr_matches_scalar_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_frame(&mut rng, 16, 12);
        let b = random_frame(&mut rng, 16, 12);
        let mut mse = 0.0;
        for (pa, pb) in a.pixels.iter().zip(b.pixels.iter()) {
            for c in 0..3 {
                mse += (pa[c] - pb[c]).powi(2);
            }
        }
        mse /= (16.0 * 12.0 * 3.0) as Real;
        let want = 10.0 * (1.0 / mse).log10();
        assert!((psnr(&a, &b).unwrap() - want).abs() < 1e-6);
    }

    #[test]
    fn ssim_identical_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_frame(&mut rng, 16, 16);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_discriminates_noise_levels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_frame(&mut rng, 24, 24);
        let mut slightly = a.clone();
        let mut badly = a.clone();
        for p in slightly.pixels.iter_mut() {
            p.x = (p.x + rng.gen_range(-0.02..0.02)).clamp(0.0, 1.0);
        }
        for p in badly.pixels.iter_mut() {
            *p = Vector3::new(
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
            );
        }
        let s1 = ssim(&a, &slightly).unwrap();
        let s2 = ssim(&a, &badly).unwrap();
        assert!(s1 > 0.9, "slight noise ssim {s1}");
        assert!(s2 < s1, "ssim should decrease with heavy noise");
    }

    #[test]
    fn ssim_matches_scalar_reference() {
        // Straightforward reimplementation with explicit formulas.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_frame(&mut rng, 15, 13);
        let b = random_frame(&mut rng, 15, 13);
        let kernel = gaussian_kernel();
        let (w, h, half) = (15usize, 13usize, 5usize);
        let mut total = 0.0;
        let mut count = 0;
        for ch in 0..3 {
            for cy in half..h - half {
                for cx in half..w - half {
                    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for ky in 0..11 {
                        for kx in 0..11 {
                            let wgt = kernel[ky * 11 + kx];
                            let xv = a.pixels[(cy + ky - half) * w + cx + kx - half][ch];
                            let yv = b.pixels[(cy + ky - half) * w + cx + kx - half][ch];
                            mx += wgt * xv;
                            my += wgt * yv;
                            sxx += wgt * xv * xv;
                            syy += wgt * yv * yv;
                            sxy += wgt * xv * yv;
                        }
                    }
                    let (vx, vy, vxy) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                    total += ((2.0 * mx * my + SSIM_C1) * (2.0 * vxy + SSIM_C2))
                        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                    count += 1;
                }
            }
        }
        let want = total / count as Real;
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-6);
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_frame(&mut rng, 13, 12);
        let b = random_frame(&mut rng, 13, 12);
        let (_, grad) = ssim_with_grad(&a, &b).unwrap();
        let eps = 1e-6;
        for probe in 0..40 {
            let x = (probe * 7) % 13;
            let y = (probe * 5) % 12;
            let ch = probe % 3;
            let mut plus = a.clone();
            plus.pixels[(y * 13 + x) as usize][ch] += eps;
            let mut minus = a.clone();
            minus.pixels[(y * 13 + x) as usize][ch] -= eps;
            let fd = (ssim(&plus, &b).unwrap() - ssim(&minus, &b).unwrap()) / (2.0 * eps);
            let an = grad.pixels[(y * 13 + x) as usize][ch];
            assert!(
                (fd - an).abs() < 1e-6 + 1e-3 * fd.abs(),
                "pixel ({x},{y},{ch}): analytic {an} fd {fd}"
            );
        }
    }

    #[test]
    fn ssim_rejects_tiny_images() {
        let a = RgbFrame::new(8, 8, Vector3::zeros());
        assert!(ssim(&a, &a).is_err());
    }
}
