//! Cone-beam pinhole cameras, rigid poses and the projections used by the
//! rasterizer.
//!
//! A [`Pose`] maps world points into the camera frame, `x_cam = R x + t`.
//! The camera looks down its `+z` axis; the X-ray source sits at the camera
//! center and the detector is the image plane.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, Mat3, Quat, Vec3};

/// Points at or closer than this camera-frame depth (mm) are culled.
pub const Z_NEAR: f64 = 1.0;
/// Screen-space dilation added to every projected covariance (px²).
pub const EPS_LOWPASS: f64 = 0.3;

/// Symmetric 2×2 matrix stored as `(xx, xy, yy)`.
pub type Cov2 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// World→camera rotation `(w, x, y, z)`.
    pub rotation: Quat,
    /// Camera-frame position of the world origin (mm).
    pub translation: Vec3,
}

impl Pose {
    /// Builds a pose, renormalizing the quaternion.
    pub fn new(rotation: Quat, translation: Vec3) -> Self {
        Self { rotation: math::quat_normalize(rotation), translation }
    }

    pub fn identity() -> Self {
        Self::new([1.0, 0.0, 0.0, 0.0], [0.0; 3])
    }

    pub fn from_matrix(r: &Mat3, translation: Vec3) -> Self {
        Self::new(math::mat_to_quat(r), translation)
    }

    pub fn matrix(&self) -> Mat3 {
        math::quat_to_mat(self.rotation)
    }

    /// World→camera transform of a point.
    pub fn apply(&self, x: Vec3) -> Vec3 {
        math::add(math::mat_vec(&self.matrix(), x), self.translation)
    }

    /// World position of the camera center (the X-ray source).
    pub fn camera_center(&self) -> Vec3 {
        math::scale(math::mat_t_vec(&self.matrix(), self.translation), -1.0)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        let r = self.matrix();
        Pose::new(
            math::quat_mul(self.rotation, other.rotation),
            math::add(math::mat_vec(&r, other.translation), self.translation),
        )
    }

    pub fn inverse(&self) -> Pose {
        let rt = math::transpose(&self.matrix());
        Pose::new(math::quat_conj(self.rotation), math::scale(math::mat_vec(&rt, self.translation), -1.0))
    }
}

/// SE(3) exponential of a twist `(ω, v)`: rotation vector (rad) and
/// translational part (mm).
pub fn se3_exp(delta: &[f64; 6]) -> Pose {
    let w = [delta[0], delta[1], delta[2]];
    let v = [delta[3], delta[4], delta[5]];
    let theta2 = math::dot(w, w);
    let theta = math::sqrt(theta2);
    let (a, b) = if theta < 1e-6 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        ((1.0 - libm::cos(theta)) / theta2, (theta - libm::sin(theta)) / (theta2 * theta))
    };
    let wx = math::skew(w);
    let wx2 = math::mat_mul(&wx, &wx);
    let mut vm = math::IDENTITY;
    for i in 0..3 {
        for j in 0..3 {
            vm[i][j] += a * wx[i][j] + b * wx2[i][j];
        }
    }
    Pose::new(math::quat_from_rotvec(w), math::mat_vec(&vm, v))
}

/// Left-composes the exponential of `delta` onto `base`.
pub fn perturb_pose(base: &Pose, delta: &[f64; 6]) -> Pose {
    se3_exp(delta).compose(base)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    /// Source-to-detector distance in pixels.
    pub focal_px: f64,
    pub width: usize,
    pub height: usize,
    pub principal: [f64; 2],
}

impl Intrinsics {
    /// Principal point at the detector center.
    pub fn centered(focal_px: f64, width: usize, height: usize) -> Self {
        Self { focal_px, width, height, principal: [0.5 * width as f64, 0.5 * height as f64] }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal_px > 0.0) || !self.focal_px.is_finite() {
            return Err(Error::InvalidArgument(alloc::format!("focal_px must be > 0, got {}", self.focal_px)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::EmptyImage);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub pose: Pose,
    pub intrinsics: Intrinsics,
}

impl CameraView {
    pub fn new(pose: Pose, intrinsics: Intrinsics) -> Self {
        Self { pose, intrinsics }
    }

    /// Camera on a circular orbit around the world `z` axis at
    /// `source_distance` mm from the origin, looking at the origin. Image
    /// rows run along world `-z`.
    pub fn orbit(angle_rad: f64, source_distance: f64, intrinsics: Intrinsics) -> Self {
        let (s, c) = (libm::sin(angle_rad), libm::cos(angle_rad));
        let center = [source_distance * c, source_distance * s, 0.0];
        let r: Mat3 = [[-s, c, 0.0], [0.0, 0.0, -1.0], [-c, -s, 0.0]];
        let t = math::scale(math::mat_vec(&r, center), -1.0);
        Self::new(Pose::from_matrix(&r, t), intrinsics)
    }

    /// World-frame unit direction of the ray through the center of pixel
    /// `(px, py)`.
    pub fn pixel_ray(&self, px: usize, py: usize) -> Vec3 {
        let k = &self.intrinsics;
        let d_cam =
            [(px as f64 + 0.5 - k.principal[0]) / k.focal_px, (py as f64 + 0.5 - k.principal[1]) / k.focal_px, 1.0];
        let d = math::mat_t_vec(&self.pose.matrix(), d_cam);
        math::scale(d, 1.0 / math::norm(d))
    }
}

/// Perspective projection of a world point: pixel position and camera-frame
/// depth.
pub fn project_point(view: &CameraView, mu: Vec3) -> Result<([f64; 2], f64)> {
    let p = view.pose.apply(mu);
    if p[2] <= Z_NEAR {
        return Err(Error::BehindCamera(p[2]));
    }
    let k = &view.intrinsics;
    Ok(([k.principal[0] + k.focal_px * p[0] / p[2], k.principal[1] + k.focal_px * p[1] / p[2]], p[2]))
}

/// 2×3 Jacobian of the perspective map at a camera-frame point.
pub fn perspective_jacobian(focal_px: f64, p_cam: Vec3) -> [[f64; 3]; 2] {
    let inv_z = 1.0 / p_cam[2];
    let inv_z2 = inv_z * inv_z;
    [[focal_px * inv_z, 0.0, -focal_px * p_cam[0] * inv_z2], [0.0, focal_px * inv_z, -focal_px * p_cam[1] * inv_z2]]
}

/// `T Σ Tᵀ` for a 2×3 `T` and symmetric 3×3 `Σ`.
pub fn congruence_2x3(t: &[[f64; 3]; 2], sigma: &Mat3) -> Cov2 {
    let mut ts = [[0.0; 3]; 2];
    for i in 0..2 {
        for j in 0..3 {
            ts[i][j] = t[i][0] * sigma[0][j] + t[i][1] * sigma[1][j] + t[i][2] * sigma[2][j];
        }
    }
    let e = |i: usize, j: usize| ts[i][0] * t[j][0] + ts[i][1] * t[j][1] + ts[i][2] * t[j][2];
    [e(0, 0), e(0, 1), e(1, 1)]
}

/// First-order image-plane covariance of a 3D Gaussian, including the
/// low-pass dilation.
pub fn project_covariance(view: &CameraView, mu: Vec3, sigma: &Mat3) -> Result<Cov2> {
    let p = view.pose.apply(mu);
    if p[2] <= Z_NEAR {
        return Err(Error::BehindCamera(p[2]));
    }
    let j = perspective_jacobian(view.intrinsics.focal_px, p);
    let w = view.pose.matrix();
    let mut jw = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            jw[r][c] = j[r][0] * w[0][c] + j[r][1] * w[1][c] + j[r][2] * w[2][c];
        }
    }
    let [a, b, c] = congruence_2x3(&jw, sigma);
    Ok([a + EPS_LOWPASS, b, c + EPS_LOWPASS])
}

/// Polar angle from world `+z` and azimuth of `d`, assumed unit length.
pub fn direction_angles(d: Vec3) -> (f64, f64) {
    (libm::acos(d[2].clamp(-1.0, 1.0)), libm::atan2(d[1], d[0]))
}

/// World-frame angles `(θ, φ)` of the ray from the source to `mu`.
pub fn ray_angles(view: &CameraView, mu: Vec3) -> Result<(f64, f64)> {
    let d = math::sub(mu, view.pose.camera_center());
    let n = math::norm(d);
    if !(n > 0.0) {
        return Err(Error::ZeroDirection);
    }
    Ok(direction_angles(math::scale(d, 1.0 / n)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::{FRAC_PI_2, PI};

    fn view() -> CameraView {
        CameraView::new(Pose::identity(), Intrinsics::centered(100.0, 64, 48))
    }

    #[test]
    fn axis_point_projects_to_principal() {
        let (uv, depth) = project_point(&view(), [0.0, 0.0, 50.0]).unwrap();
        assert_eq!(uv, [32.0, 24.0]);
        assert_eq!(depth, 50.0);
    }

    #[test]
    fn forty_five_degree_ray() {
        let (uv, _) = project_point(&view(), [30.0, 0.0, 30.0]).unwrap();
        assert!((uv[0] - 132.0).abs() < 1e-12 && (uv[1] - 24.0).abs() < 1e-12);
    }

    #[test]
    fn behind_camera() {
        assert!(matches!(project_point(&view(), [1.0, 1.0, 0.0]), Err(Error::BehindCamera(_))));
        assert!(project_covariance(&view(), [0.0, 0.0, -3.0], &math::IDENTITY).is_err());
    }

    #[test]
    fn isotropic_covariance_on_axis() {
        let s2 = 4.0;
        let sigma = [[s2, 0.0, 0.0], [0.0, s2, 0.0], [0.0, 0.0, s2]];
        let z = 80.0;
        let c = project_covariance(&view(), [0.0, 0.0, z], &sigma).unwrap();
        let expect = (100.0 / z) * (100.0 / z) * s2 + EPS_LOWPASS;
        assert!((c[0] - expect).abs() < 1e-12);
        assert!((c[2] - expect).abs() < 1e-12);
        assert_eq!(c[1], 0.0);
    }

    #[test]
    fn zero_covariance_is_lowpass_floor() {
        let c = project_covariance(&view(), [3.0, -2.0, 40.0], &[[0.0; 3]; 3]).unwrap();
        assert_eq!(c, [EPS_LOWPASS, 0.0, EPS_LOWPASS]);
    }

    #[test]
    fn ray_angle_conventions() {
        let v = view();
        let (t, p) = ray_angles(&v, [0.0, 0.0, 5.0]).unwrap();
        assert_eq!((t, p), (0.0, 0.0));
        let (t, p) = ray_angles(&v, [5.0, 0.0, 0.0]).unwrap();
        assert!((t - FRAC_PI_2).abs() < 1e-15 && p == 0.0);
        let (t, p) = ray_angles(&v, [0.0, 5.0, 0.0]).unwrap();
        assert!((t - FRAC_PI_2).abs() < 1e-15 && (p - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(ray_angles(&v, [0.0; 3]), Err(Error::ZeroDirection));
        let (_, p) = ray_angles(&v, [-1.0, 0.0, 0.0]).unwrap();
        assert_eq!(p, PI);
    }

    #[test]
    fn perturb_identity_and_inverse() {
        let base = Pose::new([0.9, 0.1, -0.3, 0.2], [1.0, -2.0, 300.0]);
        assert_eq!(perturb_pose(&base, &[0.0; 6]), base);
        let d = [0.1, -0.2, 0.3, 5.0, -1.0, 2.0];
        let nd = d.map(|x| -x);
        let back = perturb_pose(&perturb_pose(&base, &d), &nd);
        for i in 0..4 {
            assert!((back.rotation[i] - base.rotation[i]).abs() < 1e-9);
        }
        for i in 0..3 {
            assert!((back.translation[i] - base.translation[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn perturb_rotates_about_z() {
        let p = perturb_pose(&Pose::identity(), &[0.0, 0.0, FRAC_PI_2, 0.0, 0.0, 0.0]);
        let x = p.apply([1.0, 0.0, 0.0]);
        assert!(x[0].abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn orbit_camera_looks_at_origin() {
        let k = Intrinsics::centered(256.0, 128, 128);
        for a in [-1.2, 0.0, 0.4, 2.5] {
            let v = CameraView::orbit(a, 200.0, k);
            let (uv, depth) = project_point(&v, [0.0; 3]).unwrap();
            assert!((uv[0] - 64.0).abs() < 1e-9 && (uv[1] - 64.0).abs() < 1e-9);
            assert!((depth - 200.0).abs() < 1e-9);
            let c = v.pose.camera_center();
            assert!((c[0] - 200.0 * libm::cos(a)).abs() < 1e-9);
            // world +z appears toward the top of the image
            let (up, _) = project_point(&v, [0.0, 0.0, 10.0]).unwrap();
            assert!(up[1] < 64.0);
        }
    }

    #[test]
    fn compose_and_inverse() {
        let a = Pose::new([0.8, 0.2, 0.3, -0.1], [4.0, 5.0, 6.0]);
        let x = [1.0, -2.0, 0.5];
        let y = a.inverse().apply(a.apply(x));
        for i in 0..3 {
            assert!((x[i] - y[i]).abs() < 1e-12);
        }
    }
}
