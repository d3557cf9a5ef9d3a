//! Analytical radiograph targets: Siddon line integrals through the
//! attenuation volume, with an optional synthetic direction-dependent
//! modulation.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraView, Intrinsics};
use crate::math::{self, Vec3};
use crate::splat::RenderedImage;
use crate::volume::AttenuationVolume;

pub const DEFAULT_RANGE_DEG: [f64; 2] = [-90.0, 90.0];
pub const MAX_PERTURB_EPSILON: f64 = 0.1;

/// Exact line integral of `density * mu_scale` along the segment
/// `src → dst`, by parametric traversal of the voxel boundary planes.
pub fn siddon_integral(v: &AttenuationVolume, src: Vec3, dst: Vec3) -> Result<f64> {
    let d = math::sub(dst, src);
    let len = math::norm(d);
    if !(len > 0.0) {
        return Err(Error::DegenerateRay);
    }
    let g = v.grid();
    let (lo, hi) = g.bounds();
    let mut a_min = 0.0f64;
    let mut a_max = 1.0f64;
    for a in 0..3 {
        if d[a] == 0.0 {
            if src[a] < lo[a] || src[a] >= hi[a] {
                return Ok(0.0);
            }
        } else {
            let t0 = (lo[a] - src[a]) / d[a];
            let t1 = (hi[a] - src[a]) / d[a];
            a_min = a_min.max(t0.min(t1));
            a_max = a_max.min(t0.max(t1));
        }
    }
    if a_min >= a_max {
        return Ok(0.0);
    }

    let plane = |a: usize, i: i64| lo[a] + i as f64 * g.spacing[a];
    let alpha_of = |a: usize, i: i64| (plane(a, i) - src[a]) / d[a];
    let mut next_plane = [0i64; 3];
    let mut next_alpha = [f64::INFINITY; 3];
    for a in 0..3 {
        if d[a] == 0.0 {
            continue;
        }
        let entry = (src[a] + a_min * d[a] - lo[a]) / g.spacing[a];
        let mut i = if d[a] > 0.0 { libm::ceil(entry) as i64 } else { libm::floor(entry) as i64 };
        let step = if d[a] > 0.0 { 1 } else { -1 };
        if alpha_of(a, i) <= a_min {
            i += step;
        }
        next_plane[a] = i;
        next_alpha[a] = alpha_of(a, i);
    }

    let density = v.density();
    let dims = g.dims;
    let mut sum = 0.0;
    let mut cur = a_min;
    while cur < a_max {
        let nxt = next_alpha[0].min(next_alpha[1]).min(next_alpha[2]).min(a_max);
        if nxt > cur {
            let mid = 0.5 * (cur + nxt);
            let mut idx = [0usize; 3];
            for a in 0..3 {
                let c = libm::floor((src[a] + mid * d[a] - lo[a]) / g.spacing[a]);
                idx[a] = (c.max(0.0) as usize).min(dims[a] - 1);
            }
            sum += density[g.index(idx[0], idx[1], idx[2])] * (nxt - cur);
        }
        for a in 0..3 {
            if next_alpha[a] <= nxt {
                next_plane[a] += if d[a] > 0.0 { 1 } else { -1 };
                next_alpha[a] = alpha_of(a, next_plane[a]);
            }
        }
        cur = nxt;
    }
    Ok(sum * len * v.mu_scale())
}

/// Multiplicative modulation `1 + ε (axis · ray)` applied to target pixels
/// to give them a direction-dependent component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnisoPerturbSpec {
    pub epsilon: f64,
    /// Unit vector of the degree-1 modulation.
    pub axis: Vec3,
}

impl AnisoPerturbSpec {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(0.0..=MAX_PERTURB_EPSILON).contains(&epsilon) {
            return Err(Error::InvalidArgument(alloc::format!(
                "perturbation amplitude must be in [0, {MAX_PERTURB_EPSILON}], got {epsilon}"
            )));
        }
        Ok(Self { epsilon, axis: [0.0, 1.0, 0.0] })
    }

    /// Modulation factor for a world-frame ray direction.
    pub fn factor(&self, ray: Vec3) -> f64 {
        1.0 + self.epsilon * math::dot(self.axis, ray)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub offset: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetImageSet {
    pub views: Vec<CameraView>,
    pub images: Vec<RenderedImage>,
    pub normalization: Normalization,
    pub perturb: Option<AnisoPerturbSpec>,
}

impl TargetImageSet {
    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }
}

/// Raw (unnormalized) line-integral image for one view.
pub fn raw_projection(v: &AttenuationVolume, view: &CameraView) -> Result<Vec<f64>> {
    view.intrinsics.validate()?;
    let src = view.pose.camera_center();
    let far = math::norm(math::sub(src, v.grid().center())) + v.grid().diagonal();
    let (w, h) = (view.intrinsics.width, view.intrinsics.height);
    let mut out = Vec::with_capacity(w * h);
    for py in 0..h {
        for px in 0..w {
            let dst = math::add(src, math::scale(view.pixel_ray(px, py), far));
            out.push(siddon_integral(v, src, dst)?);
        }
    }
    Ok(out)
}

/// Renders normalized targets for every view. The scale is `1 / max` over
/// the whole set (1 when every integral is zero).
pub fn render_targets(
    v: &AttenuationVolume,
    views: &[CameraView],
    perturb: Option<AnisoPerturbSpec>,
) -> Result<TargetImageSet> {
    if views.is_empty() {
        return Err(Error::NoViews);
    }
    let raws = views.iter().map(|view| raw_projection(v, view)).collect::<Result<Vec<_>>>()?;
    let max = raws.iter().flatten().cloned().fold(0.0, f64::max);
    let normalization = Normalization { offset: 0.0, scale: if max > 0.0 { 1.0 / max } else { 1.0 } };
    let images = apply_normalization(&raws, views, normalization, perturb)?;
    Ok(TargetImageSet { views: views.to_vec(), images, normalization, perturb })
}

/// Renders targets with an externally fixed normalization, e.g. test views
/// that must share the training set's scale.
pub fn render_targets_with(
    v: &AttenuationVolume,
    views: &[CameraView],
    normalization: Normalization,
    perturb: Option<AnisoPerturbSpec>,
) -> Result<TargetImageSet> {
    if views.is_empty() {
        return Err(Error::NoViews);
    }
    let raws = views.iter().map(|view| raw_projection(v, view)).collect::<Result<Vec<_>>>()?;
    let images = apply_normalization(&raws, views, normalization, perturb)?;
    Ok(TargetImageSet { views: views.to_vec(), images, normalization, perturb })
}

fn apply_normalization(
    raws: &[Vec<f64>],
    views: &[CameraView],
    norm: Normalization,
    perturb: Option<AnisoPerturbSpec>,
) -> Result<Vec<RenderedImage>> {
    raws.iter()
        .zip(views)
        .map(|(raw, view)| {
            let w = view.intrinsics.width;
            let pixels = raw
                .iter()
                .enumerate()
                .map(|(i, &r)| {
                    let mut p = (r - norm.offset) * norm.scale;
                    if let Some(pt) = perturb {
                        p *= pt.factor(view.pixel_ray(i % w, i / w));
                    }
                    p.clamp(0.0, 1.0)
                })
                .collect();
            RenderedImage::new(w, view.intrinsics.height, pixels)
        })
        .collect()
}

/// `n` evenly spaced angles (radians) spanning `range_deg`, endpoints
/// included.
pub fn even_angles(n: usize, range_deg: [f64; 2]) -> Vec<f64> {
    let [a, b] = range_deg;
    (0..n)
        .map(|i| {
            let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
            (a + t * (b - a)).to_radians()
        })
        .collect()
}

/// `n` seeded uniform angles (radians) within `range_deg`.
pub fn random_angles(n: usize, range_deg: [f64; 2], seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [a, b] = range_deg;
    (0..n).map(|_| (a + rng.gen::<f64>() * (b - a)).to_radians()).collect()
}

pub fn orbit_views(angles: &[f64], source_distance: f64, intrinsics: Intrinsics) -> Vec<CameraView> {
    angles.iter().map(|&a| CameraView::orbit(a, source_distance, intrinsics)).collect()
}
