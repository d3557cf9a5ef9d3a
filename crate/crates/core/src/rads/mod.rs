//! Radiodensity-aware dual sampling.
//!
//! Interface points from marching cubes seed the isotropic set; voxel
//! centers drawn with probability proportional to density are split evenly
//! between the isotropic and the directional set.

mod knn;
mod marching_cubes;

pub use knn::mean_knn_distance;
pub use marching_cubes::EDGE_TABLE;

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gsmodel::{GaussianSet, SetKind, DEFAULT_FEATURE_DIM};
use crate::math::Vec3;
use crate::volume::AttenuationVolume;

pub const DEFAULT_N1: usize = 15_000;
pub const DEFAULT_N2: usize = 10_000;
/// Neighbours averaged for the initial scale.
pub const SCALE_NEIGHBOURS: usize = 3;
/// Lower bound on the initial scale, as a fraction of the smallest voxel
/// spacing. Density-weighted draws repeat voxel centers, which would
/// otherwise give zero-width Gaussians.
pub const MIN_SCALE_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    MarchingCubes,
    DensityWeighted,
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub points: Vec<Vec3>,
    pub source: SourceTag,
}

impl PointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// The threshold used when none is given: midway between the volume's
/// minimum and maximum density.
pub fn default_threshold(v: &AttenuationVolume) -> f64 {
    let (lo, hi) = v.min_max();
    0.5 * (lo + hi)
}

/// Isosurface vertices of the density field at `threshold`.
pub fn marching_cubes(v: &AttenuationVolume, threshold: f64) -> PointSet {
    PointSet { points: marching_cubes::marching_cubes(v, threshold), source: SourceTag::MarchingCubes }
}

fn weighted_draws(v: &AttenuationVolume, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    let mut cumulative = Vec::with_capacity(v.density().len());
    let mut total = 0.0;
    for &d in v.density() {
        total += d;
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::NoSamplingMass);
    }
    let last = v.density().iter().rposition(|&d| d > 0.0).expect("positive mass");
    Ok((0..n)
        .map(|_| {
            let u = rng.gen::<f64>() * total;
            cumulative.partition_point(|&c| c <= u).min(last)
        })
        .collect())
}

/// Indices of `n` voxels drawn with replacement, probability proportional
/// to density.
pub fn density_weighted_indices(v: &AttenuationVolume, n: usize, seed: u64) -> Result<Vec<usize>> {
    weighted_draws(v, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Voxel centers drawn with replacement, probability proportional to
/// density.
pub fn density_weighted_sample(v: &AttenuationVolume, n: usize, seed: u64) -> Result<PointSet> {
    let idx = density_weighted_indices(v, n, seed)?;
    Ok(PointSet {
        points: idx.into_iter().map(|i| v.grid().center_of_index(i)).collect(),
        source: SourceTag::DensityWeighted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadsConfig {
    pub n1: usize,
    pub n2: usize,
    pub seed: u64,
    pub feature_dim: usize,
    /// Marching-cubes level; `None` uses [`default_threshold`].
    #[serde(default)]
    pub threshold: Option<f64>,
}

impl Default for RadsConfig {
    fn default() -> Self {
        Self { n1: DEFAULT_N1, n2: DEFAULT_N2, seed: 0, feature_dim: DEFAULT_FEATURE_DIM, threshold: None }
    }
}

/// Initial scales: mean distance to the nearest neighbours among all
/// initial points, clamped to `[MIN_SCALE_FRACTION * min spacing, diagonal]`.
fn initial_scales(v: &AttenuationVolume, points: &[Vec3]) -> Vec<f64> {
    let g = v.grid();
    let floor = MIN_SCALE_FRACTION * g.spacing.iter().cloned().fold(f64::INFINITY, f64::min);
    let ceil = g.diagonal();
    mean_knn_distance(points, SCALE_NEIGHBOURS).into_iter().map(|d| d.clamp(floor, ceil)).collect()
}

fn build_sets(v: &AttenuationVolume, iso_pts: Vec<Vec3>, dir_pts: Vec<Vec3>, k: usize) -> (GaussianSet, GaussianSet) {
    let n_iso = iso_pts.len();
    let mut all = iso_pts;
    all.extend_from_slice(&dir_pts);
    let scales = initial_scales(v, &all);
    all.truncate(n_iso);
    (
        GaussianSet::from_points(SetKind::Isotropic, k, all, &scales[..n_iso]),
        GaussianSet::from_points(SetKind::Directional, k, dir_pts, &scales[n_iso..]),
    )
}

/// Full dual-sampling initialization: all (possibly subsampled)
/// marching-cubes vertices plus half the density-weighted points seed the
/// isotropic set; the other half seeds the directional set.
pub fn rads_init_with(v: &AttenuationVolume, cfg: &RadsConfig) -> Result<(GaussianSet, GaussianSet)> {
    if cfg.n1 < 2 || cfg.n2 < 2 {
        return Err(Error::InvalidArgument("n1 and n2 must be >= 2".into()));
    }
    let n2 = cfg.n2 & !1;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let threshold = cfg.threshold.unwrap_or_else(|| default_threshold(v));
    let mut mc = marching_cubes(v, threshold).points;
    if mc.len() > cfg.n1 {
        let mut keep = rand::seq::index::sample(&mut rng, mc.len(), cfg.n1).into_vec();
        keep.sort_unstable();
        mc = keep.into_iter().map(|i| mc[i]).collect();
    }

    let dw_idx = weighted_draws(v, n2, &mut rng)?;
    let mut order: Vec<usize> = (0..n2).collect();
    order.shuffle(&mut rng);
    let center = |i: usize| v.grid().center_of_index(dw_idx[i]);

    let mut iso_pts = mc;
    iso_pts.extend(order[..n2 / 2].iter().map(|&i| center(i)));
    let dir_pts: Vec<Vec3> = order[n2 / 2..].iter().map(|&i| center(i)).collect();
    Ok(build_sets(v, iso_pts, dir_pts, cfg.feature_dim))
}

pub fn rads_init(v: &AttenuationVolume, n1: usize, n2: usize, seed: u64) -> Result<(GaussianSet, GaussianSet)> {
    rads_init_with(v, &RadsConfig { n1, n2, seed, ..RadsConfig::default() })
}

/// Baseline initialization: positions uniform over the volume's bounding
/// box, with the given set sizes.
pub fn uniform_init(
    v: &AttenuationVolume,
    n_iso: usize,
    n_dir: usize,
    k: usize,
    seed: u64,
) -> (GaussianSet, GaussianSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = v.grid().bounds();
    let mut draw = |n: usize| -> Vec<Vec3> {
        (0..n).map(|_| core::array::from_fn(|a| lo[a] + rng.gen::<f64>() * (hi[a] - lo[a]))).collect()
    };
    let iso = draw(n_iso);
    let dir = draw(n_dir);
    build_sets(v, iso, dir, k)
}
