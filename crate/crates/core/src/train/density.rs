//! Adaptive density control: clone, split and prune, per set.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::gsmodel::GaussianSet;
use crate::math;
use crate::splat::SetGradients;

/// Scale divisor applied to the children of a split.
pub const SPLIT_SCALE_DIVISOR: f64 = 1.6;
pub const SPLIT_CHILDREN: usize = 2;

/// Screen-space positional gradient norms accumulated over the views in
/// which each Gaussian was visible.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradStats {
    pub accum: Vec<f64>,
    pub count: Vec<u32>,
}

impl GradStats {
    pub fn zeros(n: usize) -> Self {
        Self { accum: vec![0.0; n], count: vec![0; n] }
    }

    pub fn add(&mut self, g: &SetGradients) {
        for i in 0..self.accum.len() {
            if g.visible[i] {
                self.accum[i] += g.mean2d_norm[i];
                self.count[i] += 1;
            }
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.accum[i] / self.count[i] as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensifyParams {
    pub grad_threshold: f64,
    pub prune_opacity: f64,
    /// Gaussians whose largest scale is at most this are cloned rather
    /// than split (mm).
    pub clone_max_scale: f64,
}

/// What happened to one set. `rows[r]` is the old index that new row `r`
/// continues, or `None` for a newly created Gaussian.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DensifyOutcome {
    pub rows: Vec<Option<usize>>,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Densifies and prunes one set in place. Survivors keep their order and
/// come first; clones and split children are appended.
pub fn densify_set<R: Rng>(set: &mut GaussianSet, stats: &GradStats, p: &DensifyParams, rng: &mut R) -> DensifyOutcome {
    let mut out = GaussianSet::empty(set.kind, set.k);
    let mut extra = GaussianSet::empty(set.kind, set.k);
    let mut rows = Vec::with_capacity(set.len());
    let mut res = DensifyOutcome::default();
    for i in 0..set.len() {
        if set.opacity(i) < p.prune_opacity {
            res.pruned += 1;
            continue;
        }
        if stats.mean(i) <= p.grad_threshold {
            out.push_from(set, i);
            rows.push(Some(i));
            continue;
        }
        let s = set.log_scales[i].map(math::exp);
        if s.iter().cloned().fold(0.0, f64::max) <= p.clone_max_scale {
            out.push_from(set, i);
            rows.push(Some(i));
            extra.push_from(set, i);
            res.cloned += 1;
        } else {
            let r = math::quat_to_mat(math::quat_normalize(set.rotations[i]));
            for _ in 0..SPLIT_CHILDREN {
                let local: [f64; 3] = core::array::from_fn(|a| {
                    let z: f64 = StandardNormal.sample(rng);
                    s[a] * z
                });
                extra.push_from(set, i);
                let last = extra.len() - 1;
                extra.positions[last] = math::add(set.positions[i], math::mat_vec(&r, local));
                extra.log_scales[last] = s.map(|v| math::ln(v / SPLIT_SCALE_DIVISOR));
            }
            res.split += 1;
        }
    }
    for i in 0..extra.len() {
        out.push_from(&extra, i);
        rows.push(None);
    }
    *set = out;
    res.rows = rows;
    res
}

/// Applies [`densify_set`] to each set independently; kinds never mix.
pub fn densify_and_prune<R: Rng>(
    iso: &mut GaussianSet,
    dir: &mut GaussianSet,
    stats: (&GradStats, &GradStats),
    p: &DensifyParams,
    rng: &mut R,
) -> (DensifyOutcome, DensifyOutcome) {
    let a = densify_set(iso, stats.0, p, rng);
    let b = densify_set(dir, stats.1, p, rng);
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gsmodel::SetKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(kind: SetKind) -> GaussianSet {
        GaussianSet::from_points(kind, 2, vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], &[0.5, 4.0, 1.0])
    }

    fn params() -> DensifyParams {
        DensifyParams { grad_threshold: 1e-3, prune_opacity: 0.005, clone_max_scale: 2.0 }
    }

    #[test]
    fn quiet_stats_change_nothing() {
        let mut s = set(SetKind::Isotropic);
        let before = s.clone();
        let out = densify_set(&mut s, &GradStats::zeros(3), &params(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(s, before);
        assert_eq!(out.rows, vec![Some(0), Some(1), Some(2)]);
    }

    #[test]
    fn transparent_gaussian_is_pruned() {
        let mut s = set(SetKind::Isotropic);
        s.opacity_logits[1] = -1e3;
        let out = densify_set(&mut s, &GradStats::zeros(3), &params(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(s.len(), 2);
        assert_eq!(out.pruned, 1);
        assert_eq!(s.positions[1], [2.0, 0.0, 0.0]);
    }

    #[test]
    fn clone_and_split() {
        let mut s = set(SetKind::Directional);
        let stats = GradStats { accum: vec![1.0, 1.0, 0.0], count: vec![1, 1, 1] };
        let out = densify_set(&mut s, &stats, &params(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!((out.cloned, out.split), (1, 1));
        // survivors 0 and 2, the clone of 0, two children of 1
        assert_eq!(s.len(), 5);
        assert_eq!(out.rows, vec![Some(0), Some(2), None, None, None]);
        assert_eq!(s.kind, SetKind::Directional);
        for c in 3..5 {
            assert!((math::exp(s.log_scales[c][0]) - 4.0 / 1.6).abs() < 1e-12);
        }
    }
}
