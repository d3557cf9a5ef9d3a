//! Reverse-mode gradients of the rasterizer.
//!
//! Each pixel replays its forward traversal (same tile list, same skips,
//! same early exit) into a scratch buffer and then walks it back to front.
//! Per-Gaussian screen-space gradients are accumulated in canonical tile
//! order and pushed through the projection afterwards.

use alloc::vec;
use alloc::vec::Vec;

use super::{splat_weight, RenderState, Scene, SIGMA_MAX, TILE_SIZE, TRANSMITTANCE_MIN};
use crate::error::{Error, Result};
use crate::geometry;
use crate::gsmodel::SetKind;
use crate::math::{self, Mat3, Quat, Vec3};
use crate::sh;

/// Gradients for one Gaussian set, mirroring its arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct SetGradients {
    pub positions: Vec<Vec3>,
    pub rotations: Vec<Quat>,
    pub log_scales: Vec<Vec3>,
    pub opacity_logits: Vec<f64>,
    pub features: Vec<f64>,
    /// `‖∂L/∂μ̂‖` in pixels: the densification statistic.
    pub mean2d_norm: Vec<f64>,
    /// Whether the Gaussian was projected in this view.
    pub visible: Vec<bool>,
}

impl SetGradients {
    pub fn zeros(n: usize, k: usize) -> Self {
        Self {
            positions: vec![[0.0; 3]; n],
            rotations: vec![[0.0; 4]; n],
            log_scales: vec![[0.0; 3]; n],
            opacity_logits: vec![0.0; n],
            features: vec![0.0; n * k],
            mean2d_norm: vec![0.0; n],
            visible: vec![false; n],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().flatten().all(|v| v.is_finite())
            && self.rotations.iter().flatten().all(|v| v.is_finite())
            && self.log_scales.iter().flatten().all(|v| v.is_finite())
            && self.opacity_logits.iter().all(|v| v.is_finite())
            && self.features.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderGradients {
    pub iso: SetGradients,
    pub dir: SetGradients,
    pub b_iso: Vec<f64>,
    pub b_dir: Vec<f64>,
    /// Gradient with respect to a left-composed pose twist
    /// `(rotation, translation)` at zero.
    pub pose: Option<[f64; 6]>,
}

/// Screen-space adjoints per global Gaussian index.
struct ScreenGrads {
    color: Vec<f64>,
    opacity: Vec<f64>,
    mean2d: Vec<[f64; 2]>,
    conic: Vec<[f64; 3]>,
}

struct Contribution {
    g: usize,
    sigma: f64,
    gauss: f64,
    trans: f64,
    dx: f64,
    dy: f64,
    clamped: bool,
}

fn pixel_pass(state: &RenderState, dl_dpixels: &[f64]) -> ScreenGrads {
    let n = state.n_iso + state.n_dir;
    let mut sg =
        ScreenGrads { color: vec![0.0; n], opacity: vec![0.0; n], mean2d: vec![[0.0; 2]; n], conic: vec![[0.0; 3]; n] };
    let proj = &state.proj;
    let (width, height) = (state.view.intrinsics.width, state.view.intrinsics.height);
    let tx = width.div_ceil(TILE_SIZE);
    let mut scratch: Vec<Contribution> = Vec::new();
    for (t, &(s, e)) in state.tile_ranges.iter().enumerate() {
        if s == e {
            continue;
        }
        let list = &state.tile_list[s as usize..e as usize];
        let (x0, y0) = ((t % tx) * TILE_SIZE, (t / tx) * TILE_SIZE);
        for py in y0..(y0 + TILE_SIZE).min(height) {
            for px in x0..(x0 + TILE_SIZE).min(width) {
                let idx = py * width + px;
                let raw = state.raw[idx];
                let dl = dl_dpixels[idx];
                // the output clamp passes no gradient outside [0, 1]
                if dl == 0.0 || !(0.0..=1.0).contains(&raw) {
                    continue;
                }
                let (fx, fy) = (px as f64 + 0.5, py as f64 + 0.5);
                scratch.clear();
                let mut trans = 1.0;
                for &g in list {
                    let g = g as usize;
                    let Some((gauss, dx, dy)) = splat_weight(proj, g, fx, fy) else {
                        continue;
                    };
                    let unclamped = proj.opacity[g] * gauss;
                    let clamped = unclamped > SIGMA_MAX;
                    let sigma = if clamped { SIGMA_MAX } else { unclamped };
                    scratch.push(Contribution { g, sigma, gauss, trans, dx, dy, clamped });
                    trans *= 1.0 - sigma;
                    if trans < TRANSMITTANCE_MIN {
                        break;
                    }
                }
                // behind = Σ_{i>j} c_i σ_i T_i
                let mut behind = 0.0;
                for c in scratch.iter().rev() {
                    let color = proj.color[c.g];
                    let d_color = c.sigma * c.trans;
                    let d_sigma = color * c.trans - behind / (1.0 - c.sigma);
                    behind += color * c.sigma * c.trans;
                    sg.color[c.g] += dl * d_color;
                    if c.clamped {
                        continue;
                    }
                    let g_sigma = dl * d_sigma;
                    sg.opacity[c.g] += g_sigma * c.gauss;
                    let g_power = g_sigma * c.sigma;
                    let conic = &proj.conic[c.g];
                    sg.mean2d[c.g][0] += g_power * (conic[0] * c.dx + conic[1] * c.dy);
                    sg.mean2d[c.g][1] += g_power * (conic[1] * c.dx + conic[2] * c.dy);
                    sg.conic[c.g][0] += -0.5 * g_power * c.dx * c.dx;
                    sg.conic[c.g][1] += -g_power * c.dx * c.dy;
                    sg.conic[c.g][2] += -0.5 * g_power * c.dy * c.dy;
                }
            }
        }
    }
    sg
}

/// Backpropagates `dl_dpixels` (image-shaped) through the forward pass that
/// produced `state`.
pub fn render_backward(
    scene: &Scene,
    state: &RenderState,
    dl_dpixels: &[f64],
    want_pose_grad: bool,
) -> Result<RenderGradients> {
    let intr = &state.view.intrinsics;
    if dl_dpixels.len() != intr.width * intr.height || state.n_iso != scene.iso.len() || state.n_dir != scene.dir.len()
    {
        return Err(Error::MismatchedIntermediates);
    }
    let k = scene.model.k;
    let kl = scene.model.k_l();
    let sg = pixel_pass(state, dl_dpixels);

    let mut out = RenderGradients {
        iso: SetGradients::zeros(scene.iso.len(), k),
        dir: SetGradients::zeros(scene.dir.len(), k),
        b_iso: vec![0.0; k],
        b_dir: vec![0.0; kl * k],
        pose: None,
    };
    let view = &state.view;
    let w = view.pose.matrix();
    let t = view.pose.translation;
    let center = view.pose.camera_center();
    let f = intr.focal_px;
    // dL/dW and dL/dt of the world→camera transform
    let mut g_w: Mat3 = [[0.0; 3]; 3];
    let mut g_t: Vec3 = [0.0; 3];
    let mut g_center: Vec3 = [0.0; 3];
    let mut ybuf = vec![0.0; kl];
    let mut ygrad = vec![[0.0; 3]; kl];

    for gidx in 0..scene.len() {
        if !state.proj.visible[gidx] {
            continue;
        }
        let (set, i) = scene.locate(gidx);
        let grads = match set.kind {
            SetKind::Isotropic => &mut out.iso,
            SetKind::Directional => &mut out.dir,
        };
        grads.visible[i] = true;
        let mu = set.positions[i];
        let p = state.proj.p_cam[gidx];
        let feat = set.feature(i);

        // radiosity
        let color = state.proj.color[gidx];
        let g_logit = sg.color[gidx] * color * (1.0 - color);
        let mut g_mu: Vec3 = [0.0; 3];
        match set.kind {
            SetKind::Isotropic =>
            {
                #[allow(clippy::needless_range_loop)]
                for j in 0..k {
                    out.b_iso[j] += g_logit * feat[j];
                    grads.features[i * k + j] = g_logit * scene.model.b_iso[j];
                }
            }
            SetKind::Directional => {
                let v = math::sub(mu, center);
                let len = math::norm(v);
                if len > 0.0 {
                    let d = math::scale(v, 1.0 / len);
                    sh::eval_cartesian(d, scene.model.degree, &mut ybuf, Some(&mut ygrad));
                    let proj_f = scene.model.dir_projection(feat);
                    let mut g_d: Vec3 = [0.0; 3];
                    for r in 0..kl {
                        let g_y = g_logit * proj_f[r];
                        for a in 0..3 {
                            g_d[a] += g_y * ygrad[r][a];
                        }
                        let row = &scene.model.b_dir[r * k..(r + 1) * k];
                        for j in 0..k {
                            out.b_dir[r * k + j] += g_logit * ybuf[r] * feat[j];
                            grads.features[i * k + j] += g_logit * ybuf[r] * row[j];
                        }
                    }
                    // through d = v / |v|
                    let radial = math::dot(g_d, d);
                    let g_v = math::scale(math::sub(g_d, math::scale(d, radial)), 1.0 / len);
                    g_mu = math::add(g_mu, g_v);
                    g_center = math::sub(g_center, g_v);
                }
            }
        }

        // opacity
        let alpha = state.proj.opacity[gidx];
        grads.opacity_logits[i] = sg.opacity[gidx] * alpha * (1.0 - alpha);

        // conic → Σ̂ (symmetric matrix calculus)
        let [ca, cb, cc] = state.proj.conic[gidx];
        let [ga, gb, gc] = sg.conic[gidx];
        let gm = [[ga, 0.5 * gb], [0.5 * gb, gc]];
        let am = [[ca, cb], [cb, cc]];
        let mut tmp = [[0.0; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                tmp[r][c] = gm[r][0] * am[0][c] + gm[r][1] * am[1][c];
            }
        }
        let mut g_cov2 = [[0.0; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                g_cov2[r][c] = -(am[r][0] * tmp[0][c] + am[r][1] * tmp[1][c]);
            }
        }

        // Σ̂ = T Σ Tᵀ + εI with T = J W
        let jac = geometry::perspective_jacobian(f, p);
        let mut tm = [[0.0; 3]; 2];
        for r in 0..2 {
            for c in 0..3 {
                tm[r][c] = jac[r][0] * w[0][c] + jac[r][1] * w[1][c] + jac[r][2] * w[2][c];
            }
        }
        let sigma = set.covariance(i);
        // dL/dΣ = Tᵀ G T
        let mut g_sigma: Mat3 = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                let mut s = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        s += tm[a][r] * g_cov2[a][b] * tm[b][c];
                    }
                }
                g_sigma[r][c] = s;
            }
        }
        // dL/dT = 2 G T Σ
        let mut g_tm = [[0.0; 3]; 2];
        for r in 0..2 {
            for c in 0..3 {
                let mut s = 0.0;
                for a in 0..2 {
                    for b in 0..3 {
                        s += g_cov2[r][a] * tm[a][b] * sigma[b][c];
                    }
                }
                g_tm[r][c] = 2.0 * s;
            }
        }
        // T = J W
        let mut g_jac = [[0.0; 3]; 2];
        for r in 0..2 {
            for c in 0..3 {
                g_jac[r][c] = g_tm[r][0] * w[c][0] + g_tm[r][1] * w[c][1] + g_tm[r][2] * w[c][2];
            }
        }
        for r in 0..3 {
            for c in 0..3 {
                g_w[r][c] += jac[0][r] * g_tm[0][c] + jac[1][r] * g_tm[1][c];
            }
        }

        // camera-frame point: through J and μ̂
        let (x, y, z) = (p[0], p[1], p[2]);
        let (iz, iz2, iz3) = (1.0 / z, 1.0 / (z * z), 1.0 / (z * z * z));
        let gmean = sg.mean2d[gidx];
        grads.mean2d_norm[i] = math::sqrt(gmean[0] * gmean[0] + gmean[1] * gmean[1]);
        let mut g_p = [
            gmean[0] * f * iz - g_jac[0][2] * f * iz2,
            gmean[1] * f * iz - g_jac[1][2] * f * iz2,
            -(gmean[0] * f * x + gmean[1] * f * y) * iz2 - (g_jac[0][0] + g_jac[1][1]) * f * iz2
                + 2.0 * f * (g_jac[0][2] * x + g_jac[1][2] * y) * iz3,
        ];
        if !g_p.iter().all(|v| v.is_finite()) {
            g_p = [0.0; 3];
        }
        g_mu = math::add(g_mu, math::mat_t_vec(&w, g_p));
        for r in 0..3 {
            for c in 0..3 {
                g_w[r][c] += g_p[r] * mu[c];
            }
            g_t[r] += g_p[r];
        }
        grads.positions[i] = g_mu;

        // Σ = R diag(e^{2s}) Rᵀ with R from the normalized quaternion
        let q_raw = set.rotations[i];
        let qn = math::quat_norm(q_raw);
        let q = math::quat_normalize(q_raw);
        let rot = math::quat_to_mat(q);
        let s2 = set.log_scales[i].map(|s| math::exp(2.0 * s));
        let mut g_rot: Mat3 = [[0.0; 3]; 3];
        for c in 0..3 {
            // H r_c
            let col = [rot[0][c], rot[1][c], rot[2][c]];
            let hr = math::mat_vec(&g_sigma, col);
            grads.log_scales[i][c] = 2.0 * s2[c] * math::dot(col, hr);
            for r in 0..3 {
                g_rot[r][c] = 2.0 * s2[c] * hr[r];
            }
        }
        let dr = math::quat_to_mat_jacobian(q);
        let mut g_qn = [0.0; 4];
        for (m, dm) in dr.iter().enumerate() {
            g_qn[m] = (0..3).flat_map(|r| (0..3).map(move |c| (r, c))).map(|(r, c)| g_rot[r][c] * dm[r][c]).sum();
        }
        let radial: f64 = (0..4).map(|m| g_qn[m] * q[m]).sum();
        grads.rotations[i] = core::array::from_fn(|m| (g_qn[m] - radial * q[m]) / qn);
    }

    // camera center C = -Wᵀ t
    for j in 0..3 {
        for i in 0..3 {
            g_w[j][i] -= t[j] * g_center[i];
        }
    }
    let wg = math::mat_vec(&w, g_center);
    for j in 0..3 {
        g_t[j] -= wg[j];
    }

    if want_pose_grad {
        let mut pose = [0.0; 6];
        for kax in 0..3 {
            let mut e = [0.0; 3];
            e[kax] = 1.0;
            let sw = math::mat_mul(&math::skew(e), &w);
            let st = math::cross(e, t);
            let mut s = 0.0;
            for r in 0..3 {
                for c in 0..3 {
                    s += g_w[r][c] * sw[r][c];
                }
                s += g_t[r] * st[r];
            }
            pose[kax] = s;
            pose[3 + kax] = g_t[kax];
        }
        out.pose = Some(pose);
    }
    Ok(out)
}
