//! The desk-scale phantom protocol shared by the command line and the
//! acceptance suite.

use anyhow::Result;
use serde::{Deserialize, Serialize};
use xsplat_core::drrcast::{
    even_angles, orbit_views, random_angles, render_targets, render_targets_with, AnisoPerturbSpec, TargetImageSet,
    DEFAULT_RANGE_DEG,
};
use xsplat_core::geometry::{CameraView, Intrinsics};
use xsplat_core::gsmodel::{Checkpoint, GaussianSet, RadiosityModel, SetKind, DEFAULT_DEGREE, DEFAULT_FEATURE_DIM};
use xsplat_core::rads::{default_threshold, marching_cubes, rads_init_with, uniform_init, RadsConfig};
use xsplat_core::train::TrainConfig;
use xsplat_core::volume::{
    hu_to_density, make_phantom, AttenuationVolume, PhantomSpec, DEFAULT_HU_WINDOW, DEFAULT_MU_SCALE,
};

pub const IMAGE_SIZE: usize = 128;
pub const FOCAL_PX: f64 = 360.0;
pub const SOURCE_DISTANCE_MM: f64 = 200.0;
pub const TRAIN_VIEWS: usize = 20;
pub const TEST_VIEWS: usize = 10;
pub const TEST_SEED: u64 = 7;
pub const ITERATIONS: usize = 5000;
/// Marching-cubes and density-weighted budgets sized so the trained model
/// stays well under a tenth of the 64³ voxel count.
pub const N1: usize = 500;
pub const N2: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Dual sampling: marching-cubes points and half the density-weighted
    /// draws in the isotropic set, the other half directional.
    Rads,
    /// Same set sizes as `Rads`, positions uniform in the volume box.
    Uniform,
    /// Every dual-sampling point isotropic, directional set empty.
    RadsIsoOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    pub kind: InitKind,
    pub n1: usize,
    pub n2: usize,
    pub degree: usize,
    pub feature_dim: usize,
    pub seed: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { kind: InitKind::Rads, n1: N1, n2: N2, degree: DEFAULT_DEGREE, feature_dim: DEFAULT_FEATURE_DIM, seed: 0 }
    }
}

/// Full training recipe as stored in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct TrainRecipe {
    pub init: InitConfig,
    pub train: TrainConfig,
}

impl TrainRecipe {
    /// The phantom protocol: default hyperparameters with the desk-scale budgets.
    pub fn phantom() -> Self {
        Self { init: InitConfig::default(), train: TrainConfig { iterations: ITERATIONS, ..TrainConfig::default() } }
    }
}

pub fn phantom_volume() -> Result<AttenuationVolume> {
    let ct = make_phantom(&PhantomSpec::two_material())?;
    Ok(hu_to_density(&ct, DEFAULT_HU_WINDOW, DEFAULT_MU_SCALE)?)
}

pub fn intrinsics() -> Intrinsics {
    Intrinsics::centered(FOCAL_PX, IMAGE_SIZE, IMAGE_SIZE)
}

/// Evenly spaced training views and seeded random test views.
pub fn protocol_views(
    n_train: usize,
    n_test: usize,
    range_deg: [f64; 2],
    seed: u64,
    intr: Intrinsics,
    distance: f64,
) -> (Vec<CameraView>, Vec<CameraView>) {
    (
        orbit_views(&even_angles(n_train, range_deg), distance, intr),
        orbit_views(&random_angles(n_test, range_deg, seed), distance, intr),
    )
}

/// Training and test targets; the test set reuses the training
/// normalization.
pub fn render_split(
    v: &AttenuationVolume,
    train: &[CameraView],
    test: &[CameraView],
    perturb: Option<AnisoPerturbSpec>,
) -> Result<(TargetImageSet, TargetImageSet)> {
    let tr = render_targets(v, train, perturb)?;
    let te = if test.is_empty() {
        TargetImageSet { views: Vec::new(), images: Vec::new(), normalization: tr.normalization, perturb }
    } else {
        render_targets_with(v, test, tr.normalization, perturb)?
    };
    Ok((tr, te))
}

/// Phantom targets at the protocol geometry with perturbation amplitude
/// `epsilon` (0 disables it).
pub fn phantom_targets(v: &AttenuationVolume, epsilon: f64) -> Result<(TargetImageSet, TargetImageSet)> {
    let (train, test) =
        protocol_views(TRAIN_VIEWS, TEST_VIEWS, DEFAULT_RANGE_DEG, TEST_SEED, intrinsics(), SOURCE_DISTANCE_MM);
    let perturb = if epsilon > 0.0 { Some(AnisoPerturbSpec::new(epsilon)?) } else { None };
    render_split(v, &train, &test, perturb)
}

pub fn initialize(v: &AttenuationVolume, cfg: &InitConfig) -> Result<Checkpoint> {
    let rads = RadsConfig { n1: cfg.n1, n2: cfg.n2, seed: cfg.seed, feature_dim: cfg.feature_dim, threshold: None };
    let (mut iso, mut dir) = rads_init_with(v, &rads)?;
    match cfg.kind {
        InitKind::Rads => {}
        InitKind::Uniform => {
            let n_mc = marching_cubes(v, default_threshold(v)).len().min(cfg.n1);
            let half = (cfg.n2 & !1) / 2;
            (iso, dir) = uniform_init(v, n_mc + half, half, cfg.feature_dim, cfg.seed);
        }
        InitKind::RadsIsoOnly => {
            for i in 0..dir.len() {
                iso.push_from(&dir, i);
            }
            dir = GaussianSet::empty(SetKind::Directional, cfg.feature_dim);
        }
    }
    let model = RadiosityModel::random(cfg.degree, cfg.feature_dim, cfg.seed)?;
    Ok(Checkpoint::new(iso, dir, model)?)
}
