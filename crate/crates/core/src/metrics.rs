//! Image-quality and model-size metrics.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gsmodel::Checkpoint;
use crate::sh;
use crate::splat::RenderedImage;

pub use crate::train::ssim;

pub const PSNR_CAP_DB: f64 = 100.0;
const MSE_FLOOR: f64 = 1e-10;
/// Floats per Gaussian excluding the feature: position 3, rotation 4,
/// scale 3, opacity 1.
pub const GEOMETRY_FLOATS: usize = 11;

/// `10·log10(1/MSE)` on unit range, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &RenderedImage, b: &RenderedImage) -> Result<f64> {
    a.same_shape(b)?;
    let n = a.pixels.len() as f64;
    let mse = a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < MSE_FLOOR {
        PSNR_CAP_DB
    } else {
        (-10.0 * libm::log10(mse)).min(PSNR_CAP_DB)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FloatCount {
    pub per_gaussian: usize,
    pub shared: usize,
}

impl FloatCount {
    pub fn total(&self) -> usize {
        self.per_gaussian + self.shared
    }
}

/// Floats for `n_total` Gaussians with `k`-dim features plus a shared
/// block of `shared` floats.
pub fn float_count_for(n_total: usize, k: usize, shared: usize) -> FloatCount {
    FloatCount { per_gaussian: n_total * (GEOMETRY_FLOATS + k), shared }
}

/// Floats stored by a checkpoint: every Gaussian plus `b_iso` and `B_dir`.
pub fn model_float_count(c: &Checkpoint) -> FloatCount {
    let k = c.model.k;
    float_count_for(c.n_total(), k, k + sh::basis_len(c.model.degree) * k)
}
