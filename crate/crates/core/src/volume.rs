//! CT volumes: the Hounsfield-unit grid, analytic phantoms and the
//! normalized attenuation field derived from them.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;

pub const DEFAULT_HU_WINDOW: [f64; 2] = [-1000.0, 2000.0];
pub const DEFAULT_MU_SCALE: f64 = 0.02;

/// Voxel grid geometry. Voxel `(i, j, k)` has its center at
/// `origin + (i, j, k) * spacing` and is stored at `i + nx*j + nx*ny*k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::EmptyDims(dims));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::BadSpacing(spacing));
        }
        Ok(Self { dims, spacing, origin })
    }

    /// Grid whose center sits at the world origin.
    pub fn centered(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        let origin = core::array::from_fn(|a| -0.5 * (dims[a] as f64 - 1.0) * spacing[a]);
        Self::new(dims, spacing, origin)
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        [
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        ]
    }

    pub fn center_of_index(&self, idx: usize) -> Vec3 {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        self.voxel_center(i, j, k)
    }

    /// World-space axis-aligned bounds of the voxel cells (not centers).
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let lo = core::array::from_fn(|a| self.origin[a] - 0.5 * self.spacing[a]);
        let hi = core::array::from_fn(|a| self.origin[a] + (self.dims[a] as f64 - 0.5) * self.spacing[a]);
        (lo, hi)
    }

    pub fn diagonal(&self) -> f64 {
        let (lo, hi) = self.bounds();
        crate::math::norm(crate::math::sub(hi, lo))
    }

    pub fn center(&self) -> Vec3 {
        let (lo, hi) = self.bounds();
        core::array::from_fn(|a| 0.5 * (lo[a] + hi[a]))
    }

    pub fn contains(&self, p: Vec3) -> bool {
        let (lo, hi) = self.bounds();
        (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a])
    }
}

/// Radiodensity grid in Hounsfield units.
#[derive(Debug, Clone, PartialEq)]
pub struct CtVolume {
    grid: Grid,
    values: Vec<f64>,
}

impl CtVolume {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        let grid = Grid::new(grid.dims, grid.spacing, grid.origin)?;
        if values.len() != grid.len() {
            return Err(Error::ElementCount { expected: grid.len(), found: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.grid.index(i, j, k)]
    }
}

/// Normalized radiodensity in `[0, 1]`; attenuation per mm is
/// `density * mu_scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttenuationVolume {
    grid: Grid,
    density: Vec<f64>,
    mu_scale: f64,
}

impl AttenuationVolume {
    pub fn new(grid: Grid, density: Vec<f64>, mu_scale: f64) -> Result<Self> {
        if !(mu_scale > 0.0) || !mu_scale.is_finite() {
            return Err(Error::BadMuScale(mu_scale));
        }
        if density.len() != grid.len() {
            return Err(Error::ElementCount { expected: grid.len(), found: density.len() });
        }
        if let Some(i) = density.iter().position(|d| !d.is_finite() || *d < 0.0 || *d > 1.0) {
            return Err(Error::InvalidArgument(alloc::format!("density at index {i} outside [0, 1]")));
        }
        Ok(Self { grid, density, mu_scale })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn mu_scale(&self) -> f64 {
        self.mu_scale
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.density.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| (lo.min(d), hi.max(d)))
    }
}

/// Linear window `[hu_lo, hu_hi] → [0, 1]`, clamped.
pub fn hu_to_density(v: &CtVolume, window: [f64; 2], mu_scale: f64) -> Result<AttenuationVolume> {
    let [lo, hi] = window;
    if !(lo < hi) {
        return Err(Error::BadWindow { lo, hi });
    }
    let width = hi - lo;
    let density = v.values.iter().map(|&hu| ((hu - lo) / width).clamp(0.0, 1.0)).collect();
    AttenuationVolume::new(v.grid, density, mu_scale)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Primitive {
    Sphere { center_mm: Vec3, radius_mm: f64, hu: f64 },
    Box { min_mm: Vec3, max_mm: Vec3, hu: f64 },
    Ellipsoid { center_mm: Vec3, radii_mm: Vec3, hu: f64 },
}

impl Primitive {
    pub fn hu(&self) -> f64 {
        match *self {
            Primitive::Sphere { hu, .. } | Primitive::Box { hu, .. } | Primitive::Ellipsoid { hu, .. } => hu,
        }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        match *self {
            Primitive::Sphere { center_mm, radius_mm, .. } => {
                let d = crate::math::sub(p, center_mm);
                crate::math::dot(d, d) <= radius_mm * radius_mm
            }
            Primitive::Box { min_mm, max_mm, .. } => (0..3).all(|a| p[a] >= min_mm[a] && p[a] <= max_mm[a]),
            Primitive::Ellipsoid { center_mm, radii_mm, .. } => {
                let s: f64 = (0..3)
                    .map(|a| {
                        let t = (p[a] - center_mm[a]) / radii_mm[a];
                        t * t
                    })
                    .sum();
                s <= 1.0
            }
        }
    }
}

/// Analytic phantom description. When `origin_mm` is absent the grid is
/// centered on the world origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    #[serde(default)]
    pub origin_mm: Option<[f64; 3]>,
    pub background_hu: f64,
    #[serde(default)]
    pub primitives: Vec<Primitive>,
}

impl PhantomSpec {
    pub fn grid(&self) -> Result<Grid> {
        match self.origin_mm {
            Some(origin) => Grid::new(self.dims, self.spacing_mm, origin),
            None => Grid::centered(self.dims, self.spacing_mm),
        }
    }

    /// Single sphere in a uniform background, centered on the grid.
    pub fn sphere(n: usize, radius_vox: f64, hu: f64, background_hu: f64) -> Self {
        Self {
            dims: [n; 3],
            spacing_mm: [1.0; 3],
            origin_mm: None,
            background_hu,
            primitives: alloc::vec![Primitive::Sphere { center_mm: [0.0; 3], radius_mm: radius_vox, hu }],
        }
    }

    /// Asymmetric soft-tissue body with bone inclusions on a 64³ grid
    /// of 1 mm voxels.
    pub fn two_material() -> Self {
        Self {
            dims: [64; 3],
            spacing_mm: [1.0; 3],
            origin_mm: None,
            background_hu: -1000.0,
            primitives: alloc::vec![
                Primitive::Ellipsoid { center_mm: [0.0, 0.0, 0.0], radii_mm: [26.0, 20.0, 28.0], hu: 0.0 },
                Primitive::Sphere { center_mm: [8.0, -5.0, 6.0], radius_mm: 7.0, hu: 1500.0 },
                Primitive::Box { min_mm: [-16.0, 2.0, -18.0], max_mm: [-6.0, 10.0, 4.0], hu: 1500.0 },
                Primitive::Ellipsoid { center_mm: [4.0, 9.0, -12.0], radii_mm: [5.0, 3.0, 4.0], hu: 1500.0 },
            ],
        }
    }
}

/// Rasterize the phantom: each voxel takes the HU of the last primitive
/// containing its center, else the background.
pub fn make_phantom(spec: &PhantomSpec) -> Result<CtVolume> {
    let grid = spec.grid()?;
    let mut values = alloc::vec![spec.background_hu; grid.len()];
    for (idx, v) in values.iter_mut().enumerate() {
        let p = grid.center_of_index(idx);
        if let Some(prim) = spec.primitives.iter().rev().find(|prim| prim.contains(p)) {
            *v = prim.hu();
        }
    }
    CtVolume::new(grid, values)
}
