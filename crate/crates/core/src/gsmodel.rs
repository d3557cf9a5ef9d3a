//! The two disentangled Gaussian sets and the shared radiosity bases.
//!
//! Isotropic Gaussians emit `sigmoid(b_iso · f)`. Directional Gaussians
//! emit `sigmoid(Y(θ, φ) · (B_dir f))` where `Y` is the degree `1..=L`
//! spherical-harmonic basis evaluated along the ray from the source.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, Mat3, Quat, Vec3};
use crate::sh;

pub const DEFAULT_DEGREE: usize = 1;
pub const DEFAULT_FEATURE_DIM: usize = 8;
pub const INITIAL_OPACITY: f64 = 0.1;
pub const BASIS_INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    Isotropic,
    Directional,
}

/// Structure-of-arrays Gaussian cloud. `features` is `len() × k`,
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSet {
    pub kind: SetKind,
    pub k: usize,
    pub positions: Vec<Vec3>,
    pub rotations: Vec<Quat>,
    pub log_scales: Vec<Vec3>,
    pub opacity_logits: Vec<f64>,
    pub features: Vec<f64>,
}

impl GaussianSet {
    pub fn empty(kind: SetKind, k: usize) -> Self {
        Self {
            kind,
            k,
            positions: Vec::new(),
            rotations: Vec::new(),
            log_scales: Vec::new(),
            opacity_logits: Vec::new(),
            features: Vec::new(),
        }
    }

    /// Default-initialized Gaussians at `positions` with isotropic scales:
    /// identity rotation, opacity [`INITIAL_OPACITY`], zero features.
    pub fn from_points(kind: SetKind, k: usize, positions: Vec<Vec3>, scales: &[f64]) -> Self {
        assert_eq!(positions.len(), scales.len());
        let n = positions.len();
        Self {
            kind,
            k,
            rotations: vec![[1.0, 0.0, 0.0, 0.0]; n],
            log_scales: scales.iter().map(|&s| [math::ln(s); 3]).collect(),
            opacity_logits: vec![math::logit(INITIAL_OPACITY); n],
            features: vec![0.0; n * k],
            positions,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.k..(i + 1) * self.k]
    }

    pub fn opacity(&self, i: usize) -> f64 {
        math::sigmoid(self.opacity_logits[i])
    }

    pub fn covariance(&self, i: usize) -> Mat3 {
        covariance_from(self.log_scales[i], self.rotations[i])
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.rotations.len() != n
            || self.log_scales.len() != n
            || self.opacity_logits.len() != n
            || self.features.len() != n * self.k
        {
            return Err(Error::InvalidArgument("gaussian set arrays have inconsistent lengths".into()));
        }
        Ok(())
    }

    /// Appends Gaussian `i` of `src` (same kind and `k`).
    pub fn push_from(&mut self, src: &GaussianSet, i: usize) {
        self.positions.push(src.positions[i]);
        self.rotations.push(src.rotations[i]);
        self.log_scales.push(src.log_scales[i]);
        self.opacity_logits.push(src.opacity_logits[i]);
        self.features.extend_from_slice(src.feature(i));
    }

    /// Keeps the Gaussians whose flag is set.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        let mut out = GaussianSet::empty(self.kind, self.k);
        for (i, &k) in keep.iter().enumerate() {
            if k {
                out.push_from(self, i);
            }
        }
        *self = out;
    }
}

/// Shared bases: `b_iso` (k) and `B_dir` (`k_L × k`, row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiosityModel {
    pub degree: usize,
    pub k: usize,
    pub b_iso: Vec<f64>,
    pub b_dir: Vec<f64>,
}

impl RadiosityModel {
    pub fn new(degree: usize, k: usize, b_iso: Vec<f64>, b_dir: Vec<f64>) -> Result<Self> {
        if degree < 1 {
            return Err(Error::BadDegree(degree));
        }
        let m = Self { degree, k, b_iso, b_dir };
        if m.b_iso.len() != k || m.b_dir.len() != m.k_l() * k {
            return Err(Error::InvalidArgument("basis shapes do not match (L, k)".into()));
        }
        if m.b_iso.iter().chain(&m.b_dir).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("basis entries must be finite".into()));
        }
        Ok(m)
    }

    pub fn zeros(degree: usize, k: usize) -> Result<Self> {
        Self::new(degree, k, vec![0.0; k], vec![0.0; sh::basis_len(degree) * k])
    }

    /// Bases drawn from `N(0, BASIS_INIT_STD²)`.
    pub fn random(degree: usize, k: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, BASIS_INIT_STD).expect("valid std");
        let b_iso = (0..k).map(|_| normal.sample(&mut rng)).collect();
        let b_dir = (0..sh::basis_len(degree) * k).map(|_| normal.sample(&mut rng)).collect();
        Self::new(degree, k, b_iso, b_dir)
    }

    pub fn k_l(&self) -> usize {
        sh::basis_len(self.degree)
    }

    /// `B_dir f`.
    pub fn dir_projection(&self, f: &[f64]) -> Vec<f64> {
        self.b_dir.chunks_exact(self.k).map(|row| dot_slice(row, f)).collect()
    }
}

/// A complete model: both Gaussian sets and the shared bases.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iso: GaussianSet,
    pub dir: GaussianSet,
    pub model: RadiosityModel,
}

impl Checkpoint {
    pub fn new(iso: GaussianSet, dir: GaussianSet, model: RadiosityModel) -> Result<Self> {
        let c = Self { iso, dir, model };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.iso.validate()?;
        self.dir.validate()?;
        if self.iso.kind != SetKind::Isotropic || self.dir.kind != SetKind::Directional {
            return Err(Error::InvalidArgument("set kinds are swapped".into()));
        }
        for set in [&self.iso, &self.dir] {
            if set.k != self.model.k {
                return Err(Error::FeatureDim { model: self.model.k, set: set.k });
            }
        }
        Ok(())
    }

    pub fn n_total(&self) -> usize {
        self.iso.len() + self.dir.len()
    }
}

#[inline]
pub(crate) fn dot_slice(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn radiosity_iso(f: &[f64], model: &RadiosityModel) -> f64 {
    math::sigmoid(dot_slice(&model.b_iso, f))
}

/// Pre-sigmoid directional logit `Y(θ, φ) · (B_dir f)`.
pub fn dir_logit(f: &[f64], theta: f64, phi: f64, model: &RadiosityModel) -> Result<f64> {
    let y = sh::eval_sh_basis(theta, phi, model.degree)?;
    Ok(dot_slice(&y, &model.dir_projection(f)))
}

pub fn radiosity_dir(f: &[f64], theta: f64, phi: f64, model: &RadiosityModel) -> Result<f64> {
    dir_logit(f, theta, phi, model).map(math::sigmoid)
}

/// `R diag(exp(2 s)) Rᵀ` for the normalized quaternion.
pub fn covariance_from(log_scale: Vec3, rotation: Quat) -> Mat3 {
    let r = math::quat_to_mat(math::quat_normalize(rotation));
    let s2 = log_scale.map(|s| math::exp(2.0 * s));
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = r[i][0] * s2[0] * r[j][0] + r[i][1] * s2[1] * r[j][1] + r[i][2] * s2[2] * r[j][2];
        }
    }
    out
}
