//! 2D/3D pose registration by inverse rendering.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{se3_exp, CameraView, Pose};
use crate::gsmodel::Checkpoint;
use crate::math::{self, Vec3};
use crate::splat::{render, render_backward, RenderedImage, Scene};
use crate::train::{loss, Moments};

/// Loss-change window for the convergence test.
pub const CONVERGENCE_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    /// Adam step for the rotation part of the twist, in radians.
    pub lr: f64,
    /// Adam step for the translation part, in mm.
    pub lr_translation: f64,
    /// Both steps decay exponentially to this fraction at `max_iters`.
    pub lr_final_ratio: f64,
    pub max_iters: usize,
    pub convergence_tol: f64,
    pub lambda: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self { lr: 0.01, lr_translation: 0.5, lr_final_ratio: 0.01, max_iters: 500, convergence_tol: 1e-6, lambda: 0.2 }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0)
            || !(self.lr_translation > 0.0)
            || !(self.lr_final_ratio > 0.0 && self.lr_final_ratio <= 1.0)
            || self.max_iters == 0
            || !(0.0..=1.0).contains(&self.lambda)
        {
            return Err(Error::InvalidArgument(alloc::format!("invalid registration config {self:?}")));
        }
        Ok(())
    }

    /// Rotation and translation steps at iteration `it`.
    pub fn steps(&self, it: usize) -> (f64, f64) {
        let t = it as f64 / self.max_iters.max(1) as f64;
        let f = math::exp(t * math::ln(self.lr_final_ratio));
        (self.lr * f, self.lr_translation * f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    /// Lowest-loss pose visited.
    pub pose: Pose,
    /// Loss at the pose evaluated in each iteration.
    pub loss_trace: Vec<f64>,
    pub iterations_used: usize,
    pub wall_ms: f64,
}

/// Maps a gradient with respect to a left-composed twist at `pose` to one
/// with respect to a right-composed (object-frame) twist.
fn left_to_right_gradient(pose: &Pose, g: &[f64; 6]) -> [f64; 6] {
    let r = pose.matrix();
    let gw = [g[0], g[1], g[2]];
    let gv = [g[3], g[4], g[5]];
    let w = math::mat_t_vec(&r, math::sub(gw, math::cross(pose.translation, gv)));
    let v = math::mat_t_vec(&r, gv);
    [w[0], w[1], w[2], v[0], v[1], v[2]]
}

/// Optimizes the pose of `init` so that the checkpoint's render matches
/// `target`. Each iteration takes an Adam step on an object-frame twist
/// re-centered at the current pose. Stops after `max_iters` or once the
/// loss changes by less than `convergence_tol` over
/// [`CONVERGENCE_WINDOW`] iterations.
pub fn register(
    c: &Checkpoint,
    target: &RenderedImage,
    init: &CameraView,
    cfg: &RegistrationConfig,
    clock: &mut dyn FnMut() -> f64,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    c.validate()?;
    let (w, h) = (init.intrinsics.width, init.intrinsics.height);
    if (w, h) != (target.width, target.height) {
        return Err(Error::DimensionMismatch(w, h, target.width, target.height));
    }
    let start = clock();
    let scene = Scene::new(&c.iso, &c.dir, &c.model);
    let mut view = *init;
    let mut rot_moments = Moments::zeros(3);
    let mut trans_moments = Moments::zeros(3);
    let mut trace = Vec::new();
    let mut best = (f64::INFINITY, init.pose);
    for it in 0..cfg.max_iters {
        let (img, state) = render(&scene, &view)?;
        let (l, dl) = loss(&img, target, cfg.lambda)?;
        trace.push(l);
        if !l.is_finite() {
            return Err(Error::RegistrationDiverged { iteration: it, trace });
        }
        if l < best.0 {
            best = (l, view.pose);
        }
        if it >= CONVERGENCE_WINDOW && (l - trace[it - CONVERGENCE_WINDOW]).abs() < cfg.convergence_tol {
            break;
        }
        let g = render_backward(&scene, &state, &dl, true)?.pose.expect("pose gradient requested");
        let g = left_to_right_gradient(&view.pose, &g);
        let (lr_rot, lr_trans) = cfg.steps(it);
        let mut delta = [0.0; 6];
        let (w, v) = delta.split_at_mut(3);
        rot_moments.update(w, &g[..3], lr_rot, it as u64 + 1, "pose rotation")?;
        trans_moments.update(v, &g[3..], lr_trans, it as u64 + 1, "pose translation")?;
        view.pose = view.pose.compose(&se3_exp(&delta));
    }
    Ok(RegistrationResult { pose: best.1, iterations_used: trace.len(), loss_trace: trace, wall_ms: clock() - start })
}

/// Rotation (degrees) and translation (mm) distance between two poses.
pub fn pose_errors(est: &Pose, gt: &Pose) -> (f64, f64) {
    let rel = math::quat_mul(math::quat_conj(gt.rotation), est.rotation);
    let rot = math::quat_angle(rel).to_degrees();
    let trans = math::norm(math::sub(est.translation, gt.translation));
    (rot, trans)
}

/// Mean camera-frame distance between the landmarks placed by `est` and by
/// `gt`.
pub fn target_registration_error(landmarks: &[Vec3], est: &Pose, gt: &Pose) -> Result<f64> {
    if landmarks.is_empty() {
        return Err(Error::NoLandmarks);
    }
    let total: f64 = landmarks.iter().map(|&x| math::norm(math::sub(est.apply(x), gt.apply(x)))).sum();
    Ok(total / landmarks.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn axis_angle_deg(axis: Vec3, deg: f64) -> math::Quat {
        let n = math::norm(axis);
        math::quat_from_rotvec(math::scale(axis, deg.to_radians() / n))
    }

    #[test]
    fn object_frame_gradient_matches_finite_differences() {
        use crate::geometry::Intrinsics;
        use crate::gsmodel::{GaussianSet, RadiosityModel, SetKind};
        let iso = GaussianSet::from_points(
            SetKind::Isotropic,
            2,
            vec![[0.0, 0.0, 0.0], [6.0, -3.0, 4.0], [-5.0, 5.0, -2.0]],
            &[3.0, 2.0, 4.0],
        );
        let mut iso = iso;
        iso.features = vec![1.0, -0.5, 0.3, 0.8, -1.0, 0.2];
        let dir = GaussianSet::empty(SetKind::Directional, 2);
        let model = RadiosityModel::new(1, 2, vec![0.7, -0.4], vec![0.0; 6]).unwrap();
        let c = Checkpoint::new(iso, dir, model).unwrap();
        let scene = Scene::new(&c.iso, &c.dir, &c.model);
        let view = CameraView::orbit(0.4, 200.0, Intrinsics::centered(300.0, 32, 32));
        let weights: Vec<f64> = (0..32 * 32).map(|i| libm::sin(i as f64 * 0.37)).collect();
        let f = |p: &Pose| -> f64 {
            let img = crate::splat::render_image(&scene, &CameraView::new(*p, view.intrinsics)).unwrap();
            img.pixels.iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let (_, state) = render(&scene, &view).unwrap();
        let left = render_backward(&scene, &state, &weights, true).unwrap().pose.unwrap();
        let right = left_to_right_gradient(&view.pose, &left);
        let h = 1e-6;
        for j in 0..6 {
            let mut d = [0.0; 6];
            d[j] = h;
            let up = f(&view.pose.compose(&se3_exp(&d)));
            d[j] = -h;
            let down = f(&view.pose.compose(&se3_exp(&d)));
            let num = (up - down) / (2.0 * h);
            assert!((num - right[j]).abs() <= 1e-3 * num.abs().max(1e-4), "{j}: {} vs {num}", right[j]);
        }
    }

    #[test]
    fn pose_error_examples() {
        let gt = Pose::new(math::quat_from_rotvec([0.1, 0.2, -0.3]), [1.0, 2.0, 200.0]);
        let (r0, t0) = pose_errors(&gt, &gt);
        assert!(r0 < 1e-12 && t0 == 0.0);
        let rot = Pose::new(math::quat_mul(gt.rotation, axis_angle_deg([0.3, -0.4, 0.5], 10.0)), gt.translation);
        let (r, t) = pose_errors(&rot, &gt);
        assert!((r - 10.0).abs() < 1e-9 && t == 0.0);
        let (r2, _) = pose_errors(&gt, &rot);
        assert!((r - r2).abs() < 1e-12);
        let tr = Pose::new(gt.rotation, math::add(gt.translation, [3.0, 4.0, 0.0]));
        let (r, t) = pose_errors(&tr, &gt);
        assert!(r.abs() < 1e-12 && (t - 5.0).abs() < 1e-12);
    }

    #[test]
    fn tre_examples() {
        let gt = Pose::new(math::quat_from_rotvec([0.1, 0.2, -0.3]), [1.0, 2.0, 200.0]);
        let lm = vec![[0.0, 0.0, 0.0], [10.0, -5.0, 3.0]];
        assert_eq!(target_registration_error(&lm, &gt, &gt).unwrap(), 0.0);
        let est = Pose::new(gt.rotation, math::add(gt.translation, [1.0, 0.0, 0.0]));
        assert!((target_registration_error(&lm, &est, &gt).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(target_registration_error(&[], &gt, &gt), Err(Error::NoLandmarks));
    }
}
