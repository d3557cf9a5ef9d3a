//! Adam with per-group learning rates over the two Gaussian sets and the
//! shared bases.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gsmodel::{Checkpoint, GaussianSet};
use crate::math;
use crate::splat::{RenderGradients, SetGradients};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

/// First and second moments for one flat parameter array.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected update of `params` at step `t` (1-based).
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64, t: u64, group: &'static str) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::ShapeMismatch(group));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(group));
        }
        let c1 = 1.0 - libm::pow(BETA1, t as f64);
        let c2 = 1.0 - libm::pow(BETA2, t as f64);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (math::sqrt(vh) + EPSILON);
        }
        Ok(())
    }

    /// Moments for the rows `src` of width `width` (new rows take zeros
    /// when `src` is `None`).
    fn gather(&self, width: usize, rows: &[Option<usize>]) -> Self {
        let mut out = Self::zeros(rows.len() * width);
        for (r, src) in rows.iter().enumerate() {
            if let Some(s) = src {
                out.m[r * width..(r + 1) * width].copy_from_slice(&self.m[s * width..(s + 1) * width]);
                out.v[r * width..(r + 1) * width].copy_from_slice(&self.v[s * width..(s + 1) * width]);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SetMoments {
    pub positions: Moments,
    pub rotations: Moments,
    pub log_scales: Moments,
    pub opacity_logits: Moments,
    pub features: Moments,
}

impl SetMoments {
    pub fn zeros(n: usize, k: usize) -> Self {
        Self {
            positions: Moments::zeros(3 * n),
            rotations: Moments::zeros(4 * n),
            log_scales: Moments::zeros(3 * n),
            opacity_logits: Moments::zeros(n),
            features: Moments::zeros(k * n),
        }
    }

    pub fn len(&self) -> usize {
        self.opacity_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity_logits.is_empty()
    }

    /// Reorders moments to follow a densification: row `r` of the new set
    /// came from old row `rows[r]`, or is freshly created (`None`).
    pub fn remap(&self, k: usize, rows: &[Option<usize>]) -> Self {
        Self {
            positions: self.positions.gather(3, rows),
            rotations: self.rotations.gather(4, rows),
            log_scales: self.log_scales.gather(3, rows),
            opacity_logits: self.opacity_logits.gather(1, rows),
            features: self.features.gather(k, rows),
        }
    }
}

/// Per-group step sizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupRates {
    pub position: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub features: f64,
    pub basis: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub iso: SetMoments,
    pub dir: SetMoments,
    pub b_iso: Moments,
    pub b_dir: Moments,
}

impl AdamState {
    pub fn new(c: &Checkpoint) -> Self {
        Self {
            step: 0,
            iso: SetMoments::zeros(c.iso.len(), c.model.k),
            dir: SetMoments::zeros(c.dir.len(), c.model.k),
            b_iso: Moments::zeros(c.model.b_iso.len()),
            b_dir: Moments::zeros(c.model.b_dir.len()),
        }
    }
}

fn check_set(set: &GaussianSet, g: &SetGradients, name: &'static str) -> Result<()> {
    let n = set.len();
    if g.positions.len() != n
        || g.rotations.len() != n
        || g.log_scales.len() != n
        || g.opacity_logits.len() != n
        || g.features.len() != set.features.len()
    {
        return Err(Error::ShapeMismatch(name));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn step_set(
    set: &mut GaussianSet,
    g: &SetGradients,
    st: &mut SetMoments,
    lr: &GroupRates,
    t: u64,
    names: [&'static str; 5],
) -> Result<()> {
    st.positions.update(set.positions.as_flattened_mut(), g.positions.as_flattened(), lr.position, t, names[0])?;
    st.rotations.update(set.rotations.as_flattened_mut(), g.rotations.as_flattened(), lr.rotation, t, names[1])?;
    st.log_scales.update(set.log_scales.as_flattened_mut(), g.log_scales.as_flattened(), lr.scale, t, names[2])?;
    st.opacity_logits.update(&mut set.opacity_logits, &g.opacity_logits, lr.opacity, t, names[3])?;
    st.features.update(&mut set.features, &g.features, lr.features, t, names[4])?;
    for q in set.rotations.iter_mut() {
        *q = math::quat_normalize(*q);
    }
    Ok(())
}

/// One Adam step over every parameter group. Gradients are validated
/// before anything is modified, so an error leaves `c` and `state`
/// untouched.
pub fn adam_step(c: &mut Checkpoint, grads: &RenderGradients, state: &mut AdamState, lr: &GroupRates) -> Result<()> {
    check_set(&c.iso, &grads.iso, "iso")?;
    check_set(&c.dir, &grads.dir, "dir")?;
    if grads.b_iso.len() != c.model.b_iso.len() {
        return Err(Error::ShapeMismatch("b_iso"));
    }
    if grads.b_dir.len() != c.model.b_dir.len() {
        return Err(Error::ShapeMismatch("b_dir"));
    }
    if state.iso.len() != c.iso.len() || state.dir.len() != c.dir.len() {
        return Err(Error::ShapeMismatch("optimizer state"));
    }
    for (set, name) in [(&grads.iso, "iso"), (&grads.dir, "dir")] {
        if !set.is_finite() {
            return Err(Error::NonFiniteGradient(name));
        }
    }
    if grads.b_iso.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient("b_iso"));
    }
    if grads.b_dir.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient("b_dir"));
    }
    state.step += 1;
    let t = state.step;
    step_set(
        &mut c.iso,
        &grads.iso,
        &mut state.iso,
        lr,
        t,
        ["iso.positions", "iso.rotations", "iso.log_scales", "iso.opacity_logits", "iso.features"],
    )?;
    step_set(
        &mut c.dir,
        &grads.dir,
        &mut state.dir,
        lr,
        t,
        ["dir.positions", "dir.rotations", "dir.log_scales", "dir.opacity_logits", "dir.features"],
    )?;
    state.b_iso.update(&mut c.model.b_iso, &grads.b_iso, lr.basis, t, "b_iso")?;
    state.b_dir.update(&mut c.model.b_dir, &grads.b_dir, lr.basis, t, "b_dir")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut m = Moments::zeros(3);
        let mut p = [1.0, -2.0, 3.0];
        m.update(&mut p, &[0.0; 3], 0.1, 1, "p").unwrap();
        assert_eq!(p, [1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_is_sign_times_lr() {
        let mut m = Moments::zeros(3);
        let mut p = [0.0; 3];
        m.update(&mut p, &[2.5, -1e-3, 40.0], 0.01, 1, "p").unwrap();
        for (v, s) in p.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((v - s * 0.01).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn rejects_bad_gradients() {
        let mut m = Moments::zeros(2);
        let mut p = [0.0; 2];
        assert_eq!(m.update(&mut p, &[f64::NAN, 0.0], 0.1, 1, "feat"), Err(Error::NonFiniteGradient("feat")));
        assert_eq!(m.update(&mut p, &[0.0], 0.1, 1, "feat"), Err(Error::ShapeMismatch("feat")));
    }

    #[test]
    fn remap_keeps_rows() {
        let mut s = SetMoments::zeros(2, 1);
        s.opacity_logits.m = vec![1.0, 2.0];
        let r = s.remap(1, &[Some(1), None, Some(0)]);
        assert_eq!(r.opacity_logits.m, vec![2.0, 0.0, 1.0]);
        assert_eq!(r.positions.len(), 9);
    }
}
