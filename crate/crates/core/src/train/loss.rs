//! Structural similarity and the photometric training loss, with
//! gradients with respect to the predicted image.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::splat::RenderedImage;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut g: [f64; SSIM_WINDOW] =
        core::array::from_fn(|i| libm::exp(-((i as f64 - half) * (i as f64 - half)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)));
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Same-size separable window filter with zero padding. The window is
/// symmetric, so this is also its own adjoint.
fn filter(src: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &g) in taps.iter().enumerate() {
                let xx = x as isize + t as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    acc += g * row[xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for (t, &g) in taps.iter().enumerate() {
            let yy = y as isize + t as isize - r;
            if yy < 0 || yy as usize >= h {
                continue;
            }
            let src_row = &tmp[yy as usize * w..(yy as usize + 1) * w];
            let dst_row = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst_row.iter_mut().zip(src_row) {
                *d += g * s;
            }
        }
    }
    out
}

/// Mean SSIM and, optionally, its gradient with respect to `a`.
fn ssim_impl(a: &RenderedImage, b: &RenderedImage, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    a.same_shape(b)?;
    let (w, h) = (a.width, a.height);
    let n = w * h;
    let taps = gaussian_taps();
    let x = &a.pixels;
    let y = &b.pixels;
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
    let mx = filter(x, w, h, &taps);
    let my = filter(y, w, h, &taps);
    let exx = filter(&xx, w, h, &taps);
    let eyy = filter(&yy, w, h, &taps);
    let exy = filter(&xy, w, h, &taps);

    let mut total = 0.0;
    let (mut d_mx, mut d_exx, mut d_exy) =
        if want_grad { (vec![0.0; n], vec![0.0; n], vec![0.0; n]) } else { (Vec::new(), Vec::new(), Vec::new()) };
    for i in 0..n {
        let (ux, uy) = (mx[i], my[i]);
        let sxx = exx[i] - ux * ux;
        let syy = eyy[i] - uy * uy;
        let sxy = exy[i] - ux * uy;
        let a1 = 2.0 * ux * uy + SSIM_C1;
        let a2 = 2.0 * sxy + SSIM_C2;
        let b1 = ux * ux + uy * uy + SSIM_C1;
        let b2 = sxx + syy + SSIM_C2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        if want_grad {
            let inv = 1.0 / n as f64;
            d_mx[i] =
                inv * (2.0 * uy * a2 / (b1 * b2) - 2.0 * ux * s / b1 - 2.0 * uy * a1 / (b1 * b2) + 2.0 * ux * s / b2);
            d_exx[i] = -inv * s / b2;
            d_exy[i] = inv * 2.0 * a1 / (b1 * b2);
        }
    }
    let mean = total / n as f64;
    if !want_grad {
        return Ok((mean, None));
    }
    let g_mx = filter(&d_mx, w, h, &taps);
    let g_exx = filter(&d_exx, w, h, &taps);
    let g_exy = filter(&d_exy, w, h, &taps);
    let grad = (0..n).map(|i| g_mx[i] + 2.0 * x[i] * g_exx[i] + y[i] * g_exy[i]).collect();
    Ok((mean, Some(grad)))
}

/// Mean structural similarity (11×11 Gaussian window, σ = 1.5, zero
/// padding, unit dynamic range).
pub fn ssim(a: &RenderedImage, b: &RenderedImage) -> Result<f64> {
    ssim_impl(a, b, false).map(|(s, _)| s)
}

/// SSIM together with `∂ssim/∂a`.
pub fn ssim_with_grad(a: &RenderedImage, b: &RenderedImage) -> Result<(f64, Vec<f64>)> {
    let (s, g) = ssim_impl(a, b, true)?;
    Ok((s, g.expect("gradient requested")))
}

/// `(1 − λ)·mean|pred − target| + λ·(1 − ssim(pred, target))` and its
/// gradient with respect to `pred`.
pub fn loss(pred: &RenderedImage, target: &RenderedImage, lambda: f64) -> Result<(f64, Vec<f64>)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(alloc::format!("lambda must be in [0, 1], got {lambda}")));
    }
    pred.same_shape(target)?;
    let n = pred.pixels.len() as f64;
    let mut l1 = 0.0;
    let mut grad: Vec<f64> = pred
        .pixels
        .iter()
        .zip(&target.pixels)
        .map(|(p, t)| {
            let d = p - t;
            l1 += d.abs();
            (1.0 - lambda) * sign(d) / n
        })
        .collect();
    let mut value = (1.0 - lambda) * l1 / n;
    if lambda > 0.0 {
        let (s, gs) = ssim_with_grad(pred, target)?;
        value += lambda * (1.0 - s);
        for (g, d) in grad.iter_mut().zip(gs) {
            *g -= lambda * d;
        }
    }
    Ok((value, grad))
}

fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}
