//! Tile-based Gaussian rasterizer producing monochrome radiographs.
//!
//! Both Gaussian sets go into one render list: a directional Gaussian
//! hidden behind an isotropic one must not reach the detector, so the sets
//! cannot be composited separately. Each pixel blends front to back,
//!
//! ```text
//! C(p) = Σ_j c_j σ_j Π_{l<j} (1 - σ_l),   σ_j = α_j exp(-½ Δᵀ Σ̂_j⁻¹ Δ)
//! ```
//!
//! with `Δ = p - μ̂_j`. Gaussians are binned into 16×16 tiles by their 3σ
//! screen footprint and sorted by (tile, camera depth, global index); the
//! global index lists the isotropic set first.

mod backward;

pub use backward::{render_backward, RenderGradients, SetGradients};

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{self, CameraView, EPS_LOWPASS, Z_NEAR};
use crate::gsmodel::{dot_slice, GaussianSet, RadiosityModel, SetKind};
use crate::math::{self, Vec3};
use crate::sh;

pub const TILE_SIZE: usize = 16;
/// Compositing stops once the transmittance falls below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
pub const SIGMA_MAX: f64 = 0.99;
/// Footprint radius in standard deviations used for tile binning.
pub const FOOTPRINT_SIGMAS: f64 = 3.0;
/// Contributions with `exp(power)` below `exp(POWER_CUTOFF)` (≈ 1.9e-12)
/// are skipped.
pub(crate) const POWER_CUTOFF: f64 = -27.0;

/// Monochrome image, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl RenderedImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if pixels.len() != width * height {
            return Err(Error::ElementCount { expected: width * height, found: pixels.len() });
        }
        if let Some(i) = pixels.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, pixels: vec![0.0; width * height] }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self { width, height, pixels: vec![value; width * height] }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn same_shape(&self, other: &RenderedImage) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(self.width, self.height, other.width, other.height));
        }
        Ok(())
    }
}

/// Borrowed view of a full model.
#[derive(Debug, Clone, Copy)]
pub struct Scene<'a> {
    pub iso: &'a GaussianSet,
    pub dir: &'a GaussianSet,
    pub model: &'a RadiosityModel,
}

impl<'a> Scene<'a> {
    pub fn new(iso: &'a GaussianSet, dir: &'a GaussianSet, model: &'a RadiosityModel) -> Self {
        Self { iso, dir, model }
    }

    pub fn len(&self) -> usize {
        self.iso.len() + self.dir.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Set and local index of global index `g`.
    #[inline]
    pub(crate) fn locate(&self, g: usize) -> (&'a GaussianSet, usize) {
        if g < self.iso.len() {
            (self.iso, g)
        } else {
            (self.dir, g - self.iso.len())
        }
    }

    fn validate(&self) -> Result<()> {
        for set in [self.iso, self.dir] {
            set.validate()?;
            if set.k != self.model.k {
                return Err(Error::FeatureDim { model: self.model.k, set: set.k });
            }
        }
        if self.iso.kind != SetKind::Isotropic || self.dir.kind != SetKind::Directional {
            return Err(Error::InvalidArgument("scene sets have the wrong kinds".into()));
        }
        Ok(())
    }
}

/// Per-Gaussian screen-space data from the forward pass. Entries for
/// culled Gaussians have `visible == false`.
#[derive(Debug, Clone, Default)]
pub(crate) struct Projected {
    pub visible: Vec<bool>,
    pub p_cam: Vec<Vec3>,
    pub mean2d: Vec<[f64; 2]>,
    pub conic: Vec<[f64; 3]>,
    pub opacity: Vec<f64>,
    pub color: Vec<f64>,
}

/// Forward-pass intermediates consumed by [`render_backward`].
#[derive(Debug, Clone)]
pub struct RenderState {
    pub(crate) view: CameraView,
    pub(crate) n_iso: usize,
    pub(crate) n_dir: usize,
    pub(crate) proj: Projected,
    /// Sorted global indices, grouped by tile.
    pub(crate) tile_list: Vec<u32>,
    pub(crate) tile_ranges: Vec<(u32, u32)>,
    /// Pre-clamp composited value per pixel.
    pub(crate) raw: Vec<f64>,
}

impl RenderState {
    pub fn view(&self) -> &CameraView {
        &self.view
    }

    /// Number of (tile, Gaussian) pairs in the render list.
    pub fn list_len(&self) -> usize {
        self.tile_list.len()
    }
}

/// Per-pixel blending weights shared by forward and backward.
#[inline]
pub(crate) fn splat_weight(proj: &Projected, g: usize, px: f64, py: f64) -> Option<(f64, f64, f64)> {
    let conic = &proj.conic[g];
    let dx = px - proj.mean2d[g][0];
    let dy = py - proj.mean2d[g][1];
    let power = -0.5 * (conic[0] * dx * dx + conic[2] * dy * dy) - conic[1] * dx * dy;
    if power < POWER_CUTOFF {
        None
    } else {
        Some((math::exp(power), dx, dy))
    }
}

fn project_all(scene: &Scene, view: &CameraView) -> Projected {
    let n = scene.len();
    let mut proj = Projected {
        visible: vec![false; n],
        p_cam: vec![[0.0; 3]; n],
        mean2d: vec![[0.0; 2]; n],
        conic: vec![[0.0; 3]; n],
        opacity: vec![0.0; n],
        color: vec![0.0; n],
    };
    let w = view.pose.matrix();
    let center = view.pose.camera_center();
    let k = &view.intrinsics;
    let kl = scene.model.k_l();
    let mut ybuf = vec![0.0; kl];
    for g in 0..n {
        let (set, i) = scene.locate(g);
        let mu = set.positions[i];
        let p = view.pose.apply(mu);
        if p[2] <= Z_NEAR {
            continue;
        }
        let sigma = set.covariance(i);
        let j = geometry::perspective_jacobian(k.focal_px, p);
        let mut jw = [[0.0; 3]; 2];
        for r in 0..2 {
            for c in 0..3 {
                jw[r][c] = j[r][0] * w[0][c] + j[r][1] * w[1][c] + j[r][2] * w[2][c];
            }
        }
        let [a, b, c] = geometry::congruence_2x3(&jw, &sigma);
        let (a, c) = (a + EPS_LOWPASS, c + EPS_LOWPASS);
        let det = a * c - b * b;
        if !(det > 0.0) {
            continue;
        }
        proj.visible[g] = true;
        proj.p_cam[g] = p;
        proj.mean2d[g] = [k.principal[0] + k.focal_px * p[0] / p[2], k.principal[1] + k.focal_px * p[1] / p[2]];
        proj.conic[g] = [c / det, -b / det, a / det];
        proj.opacity[g] = set.opacity(i);
        let f = set.feature(i);
        let logit = match set.kind {
            SetKind::Isotropic => dot_slice(&scene.model.b_iso, f),
            SetKind::Directional => {
                let v = math::sub(mu, center);
                let len = math::norm(v);
                if len > 0.0 {
                    sh::eval_cartesian(math::scale(v, 1.0 / len), scene.model.degree, &mut ybuf, None);
                } else {
                    ybuf.iter_mut().for_each(|y| *y = 0.0);
                }
                dot_slice(&ybuf, &scene.model.dir_projection(f))
            }
        };
        proj.color[g] = math::sigmoid(logit);
    }
    proj
}

/// Half-extents in pixels of the bounding box of the 3σ footprint
/// ellipse.
fn footprint_extent(conic: &[f64; 3]) -> (f64, f64) {
    // the diagonal of Σ̂, recovered from its inverse
    let det_inv = conic[0] * conic[2] - conic[1] * conic[1];
    let (sxx, syy) = (conic[2] / det_inv, conic[0] / det_inv);
    (libm::ceil(FOOTPRINT_SIGMAS * math::sqrt(sxx)), libm::ceil(FOOTPRINT_SIGMAS * math::sqrt(syy)))
}

fn bin_tiles(proj: &Projected, width: usize, height: usize) -> (Vec<u32>, Vec<(u32, u32)>) {
    let tx = width.div_ceil(TILE_SIZE);
    let ty = height.div_ceil(TILE_SIZE);
    let mut keys: Vec<(u32, f64, u32)> = Vec::new();
    for g in 0..proj.visible.len() {
        if !proj.visible[g] {
            continue;
        }
        let (rx, ry) = footprint_extent(&proj.conic[g]);
        let [mx, my] = proj.mean2d[g];
        let (x0, x1) = (mx - rx, mx + rx);
        let (y0, y1) = (my - ry, my + ry);
        if x1 < 0.0 || y1 < 0.0 || x0 >= width as f64 || y0 >= height as f64 {
            continue;
        }
        let tile_lo = |v: f64| ((v.max(0.0)) as usize) / TILE_SIZE;
        let (ix0, ix1) = (tile_lo(x0), (tile_lo(x1)).min(tx - 1));
        let (iy0, iy1) = (tile_lo(y0), (tile_lo(y1)).min(ty - 1));
        for ty_i in iy0..=iy1 {
            for tx_i in ix0..=ix1 {
                keys.push(((ty_i * tx + tx_i) as u32, proj.p_cam[g][2], g as u32));
            }
        }
    }
    keys.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut ranges = vec![(0u32, 0u32); tx * ty];
    let mut s = 0;
    while s < keys.len() {
        let t = keys[s].0;
        let mut e = s;
        while e < keys.len() && keys[e].0 == t {
            e += 1;
        }
        ranges[t as usize] = (s as u32, e as u32);
        s = e;
    }
    (keys.into_iter().map(|k| k.2).collect(), ranges)
}

/// Renders both sets jointly from `view`.
pub fn render(scene: &Scene, view: &CameraView) -> Result<(RenderedImage, RenderState)> {
    scene.validate()?;
    view.intrinsics.validate()?;
    let (width, height) = (view.intrinsics.width, view.intrinsics.height);
    let proj = project_all(scene, view);
    let (tile_list, tile_ranges) = bin_tiles(&proj, width, height);
    let tx = width.div_ceil(TILE_SIZE);

    let mut raw = vec![0.0; width * height];
    for (t, &(s, e)) in tile_ranges.iter().enumerate() {
        if s == e {
            continue;
        }
        let list = &tile_list[s as usize..e as usize];
        let (x0, y0) = ((t % tx) * TILE_SIZE, (t / tx) * TILE_SIZE);
        for py in y0..(y0 + TILE_SIZE).min(height) {
            for px in x0..(x0 + TILE_SIZE).min(width) {
                let (fx, fy) = (px as f64 + 0.5, py as f64 + 0.5);
                let mut trans = 1.0;
                let mut acc = 0.0;
                for &g in list {
                    let g = g as usize;
                    let Some((gauss, _, _)) = splat_weight(&proj, g, fx, fy) else {
                        continue;
                    };
                    let sigma = (proj.opacity[g] * gauss).min(SIGMA_MAX);
                    acc += proj.color[g] * sigma * trans;
                    trans *= 1.0 - sigma;
                    if trans < TRANSMITTANCE_MIN {
                        break;
                    }
                }
                raw[py * width + px] = acc;
            }
        }
    }
    let pixels = raw.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let image = RenderedImage { width, height, pixels };
    let state =
        RenderState { view: *view, n_iso: scene.iso.len(), n_dir: scene.dir.len(), proj, tile_list, tile_ranges, raw };
    Ok((image, state))
}

/// Forward render without keeping intermediates.
pub fn render_image(scene: &Scene, view: &CameraView) -> Result<RenderedImage> {
    render(scene, view).map(|(img, _)| img)
}

/// Diagnostic render of one set on its own. Not a valid radiograph when the
/// other set occludes anything.
pub fn render_set_solo(set: &GaussianSet, model: &RadiosityModel, view: &CameraView) -> Result<RenderedImage> {
    let other = match set.kind {
        SetKind::Isotropic => GaussianSet::empty(SetKind::Directional, set.k),
        SetKind::Directional => GaussianSet::empty(SetKind::Isotropic, set.k),
    };
    let scene = match set.kind {
        SetKind::Isotropic => Scene::new(set, &other, model),
        SetKind::Directional => Scene::new(&other, set, model),
    };
    render_image(&scene, view)
}
