//! Subcommand implementations. Each command validates and computes
//! everything before writing any file.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use xsplat_core::drrcast::{raw_projection, AnisoPerturbSpec};
use xsplat_core::geometry::{CameraView, Intrinsics, Pose};
use xsplat_core::gsmodel::Checkpoint;
use xsplat_core::math::{self, Vec3};
use xsplat_core::metrics::{model_float_count, psnr};
use xsplat_core::registration::{pose_errors, register, target_registration_error, RegistrationConfig};
use xsplat_core::splat::{render_image, RenderedImage, Scene};
use xsplat_core::train::{ssim, train, LogRow};
use xsplat_core::volume::{hu_to_density, make_phantom, PhantomSpec, DEFAULT_HU_WINDOW, DEFAULT_MU_SCALE};

use crate::formats::{self, TargetsManifest};
use crate::recipe::{self, InitKind, TrainRecipe};

const MANIFEST: &str = "manifest.json";

fn clock() -> impl FnMut() -> f64 {
    let start = Instant::now();
    move || start.elapsed().as_secs_f64() * 1e3
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Serialize)]
struct Manifest<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    config: T,
}

fn manifest<T: Serialize>(command: &str, config: T) -> Result<Vec<u8>> {
    json_bytes(&Manifest { command, version: env!("CARGO_PKG_VERSION"), config })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    TwoMaterial,
    Sphere,
}

#[derive(Debug, Clone, Args)]
pub struct PhantomArgs {
    /// Phantom description (JSON); overrides --preset.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "two-material")]
    pub preset: Preset,
    /// Output path; `.raw` and `.json` are written next to each other.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_phantom(a: &PhantomArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => read_json::<PhantomSpec>(p)?,
        None => match a.preset {
            Preset::TwoMaterial => PhantomSpec::two_material(),
            Preset::Sphere => PhantomSpec::sphere(64, 20.0, 1000.0, -1000.0),
        },
    };
    let ct = make_phantom(&spec).context("invalid phantom spec")?;
    let (json, raw) = formats::volume_paths(&a.out);
    let raw_name = raw.file_name().and_then(|n| n.to_str()).context("output path has no file name")?;
    let (text, bytes) = formats::encode_volume(&ct, raw_name)?;
    let man = a.out.with_extension("manifest.json");
    formats::write_all(&[(raw, bytes), (json, text.into_bytes()), (man, manifest("phantom", &spec)?)])
}

#[derive(Debug, Clone, Args)]
pub struct TargetsArgs {
    #[arg(long)]
    pub volume: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of evenly spaced training views.
    #[arg(long, default_value_t = recipe::TRAIN_VIEWS)]
    pub views: usize,
    /// Number of seeded random test views.
    #[arg(long, default_value_t = recipe::TEST_VIEWS)]
    pub test_views: usize,
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [-90.0, 90.0], allow_hyphen_values = true)]
    pub range_deg: Vec<f64>,
    /// Seed for the test angles.
    #[arg(long, default_value_t = recipe::TEST_SEED)]
    pub seed: u64,
    /// Amplitude of the synthetic anisotropic modulation (0 disables).
    #[arg(long, default_value_t = 0.0)]
    pub aniso: f64,
    #[arg(long, default_value_t = recipe::IMAGE_SIZE)]
    pub size: usize,
    #[arg(long, default_value_t = recipe::FOCAL_PX)]
    pub focal: f64,
    #[arg(long, default_value_t = recipe::SOURCE_DISTANCE_MM)]
    pub distance: f64,
}

pub fn cmd_targets(a: &TargetsArgs) -> Result<()> {
    ensure!(a.views >= 1, "at least one training view is required");
    let range = [a.range_deg[0], a.range_deg[1]];
    let perturb = if a.aniso > 0.0 { Some(AnisoPerturbSpec::new(a.aniso)?) } else { None };
    let intr = Intrinsics::centered(a.focal, a.size, a.size);
    intr.validate()?;
    let ct = formats::read_volume(&a.volume)?;
    let v = hu_to_density(&ct, DEFAULT_HU_WINDOW, DEFAULT_MU_SCALE)?;
    let (train_views, test_views) = recipe::protocol_views(a.views, a.test_views, range, a.seed, intr, a.distance);
    let (tr, te) = recipe::render_split(&v, &train_views, &test_views, perturb)?;
    let m = TargetsManifest {
        volume: std::path::absolute(&a.volume)?.to_string_lossy().into_owned(),
        normalization: tr.normalization,
        range_deg: range,
        seed: a.seed,
        perturb,
        n_train: tr.len(),
        n_test: te.len(),
        source_distance_mm: a.distance,
        focal_px: a.focal,
        width: a.size,
        height: a.size,
    };
    let mut files = formats::encode_image_set(&a.out.join("train"), &tr.views, &tr.images)?.files;
    files.extend(formats::encode_image_set(&a.out.join("test"), &te.views, &te.images)?.files);
    files.push((a.out.join(MANIFEST), json_bytes(&m)?));
    formats::write_all(&files)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Rads,
    Uniform,
    RadsIsoOnly,
}

#[derive(Debug, Clone, Args, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub targets: PathBuf,
    /// CT volume for initialization; defaults to the one recorded in the
    /// targets manifest.
    #[arg(long)]
    pub volume: Option<PathBuf>,
    /// Recipe file (JSON with `init` and `train` sections).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lr_basis: Option<f64>,
    #[arg(long)]
    pub lr_features: Option<f64>,
    #[arg(long)]
    pub lr_position: Option<f64>,
    #[arg(long)]
    pub lr_rotation: Option<f64>,
    #[arg(long)]
    pub lr_scale: Option<f64>,
    #[arg(long)]
    pub lr_opacity: Option<f64>,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    #[arg(long)]
    pub n1: Option<usize>,
    #[arg(long)]
    pub n2: Option<usize>,
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<TrainRecipe> {
        let mut r = match &self.config {
            Some(p) => read_json::<TrainRecipe>(p)?,
            None => TrainRecipe::phantom(),
        };
        let t = &mut r.train;
        if let Some(s) = self.seed {
            t.seed = s;
            r.init.seed = s;
        }
        macro_rules! set {
            ($($field:ident => $dst:expr),*) => { $(if let Some(v) = self.$field { $dst = v; })* };
        }
        set!(iters => t.iterations, lambda => t.lambda, lr_basis => t.lr_basis, lr_features => t.lr_features,
             lr_position => t.lr_position, lr_rotation => t.lr_rotation, lr_scale => t.lr_scale,
             lr_opacity => t.lr_opacity, n1 => r.init.n1, n2 => r.init.n2);
        if let Some(k) = self.init {
            r.init.kind = match k {
                InitArg::Rads => InitKind::Rads,
                InitArg::Uniform => InitKind::Uniform,
                InitArg::RadsIsoOnly => InitKind::RadsIsoOnly,
            };
        }
        r.train.validate()?;
        Ok(r)
    }
}

#[derive(Serialize)]
struct TrainManifest<'a> {
    targets: String,
    volume: String,
    recipe: &'a TrainRecipe,
    n_iso: usize,
    n_dir: usize,
    float_count: usize,
}

/// Runs initialization and training; returns the final checkpoint and log.
pub fn run_train(a: &TrainArgs) -> Result<(Checkpoint, Vec<LogRow>, TrainRecipe, PathBuf)> {
    let recipe = a.resolve()?;
    let tr = formats::read_target_split(&a.targets, "train")?;
    let te = formats::read_target_split(&a.targets, "test")?;
    let volume = match &a.volume {
        Some(v) => v.clone(),
        None => {
            let m: TargetsManifest = read_json(&a.targets.join(MANIFEST))?;
            PathBuf::from(m.volume)
        }
    };
    let ct = formats::read_volume(&volume)?;
    let v = hu_to_density(&ct, DEFAULT_HU_WINDOW, DEFAULT_MU_SCALE)?;
    let init = recipe::initialize(&v, &recipe.init)?;
    let mut c = clock();
    let (ck, log) = train(&tr, Some(&te), init, &recipe.train, &mut c)?;
    Ok((ck, log, recipe, volume))
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let (ck, log, recipe, volume) = run_train(a)?;
    let m = TrainManifest {
        targets: a.targets.display().to_string(),
        volume: volume.display().to_string(),
        recipe: &recipe,
        n_iso: ck.iso.len(),
        n_dir: ck.dir.len(),
        float_count: model_float_count(&ck).total(),
    };
    formats::write_all(&[
        (a.out.join("checkpoint.xsplat"), formats::encode_checkpoint(&ck)?),
        (a.out.join("log.csv"), formats::csv_bytes(&log)?),
        (a.out.join(MANIFEST), manifest("train", &m)?),
    ])
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Views file (JSON) to render.
    #[arg(long)]
    pub views: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_render(a: &RenderArgs) -> Result<()> {
    let ck = formats::read_checkpoint(&a.checkpoint)?;
    let views = formats::read_views(&a.views)?;
    ensure!(!views.is_empty(), "the views file lists no views");
    let scene = Scene::new(&ck.iso, &ck.dir, &ck.model);
    let images = views.iter().map(|v| render_image(&scene, v)).collect::<xsplat_core::Result<Vec<_>>>()?;
    let mut files = formats::encode_image_set(&a.out, &views, &images)?.files;
    #[derive(Serialize)]
    struct M<'a> {
        checkpoint: &'a Path,
        views: &'a Path,
        count: usize,
    }
    files.push((
        a.out.join(MANIFEST),
        manifest("render", M { checkpoint: &a.checkpoint, views: &a.views, count: views.len() })?,
    ));
    formats::write_all(&files)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Targets directory (its test split) or an image-set directory.
    #[arg(long)]
    pub targets: PathBuf,
    /// Report path; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub view: String,
    pub n_points: usize,
    pub psnr: f64,
    pub ssim: f64,
}

pub fn eval_rows(ck: &Checkpoint, views: &[CameraView], images: &[RenderedImage]) -> Result<Vec<EvalRow>> {
    ensure!(!views.is_empty(), "no views to evaluate");
    let scene = Scene::new(&ck.iso, &ck.dir, &ck.model);
    let n = ck.n_total();
    let mut rows = Vec::new();
    for (i, (v, img)) in views.iter().zip(images).enumerate() {
        let r = render_image(&scene, v)?;
        rows.push(EvalRow { view: i.to_string(), n_points: n, psnr: psnr(&r, img)?, ssim: ssim(&r, img)? });
    }
    let m = rows.len() as f64;
    let mean = EvalRow {
        view: "mean".into(),
        n_points: n,
        psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / m,
        ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / m,
    };
    rows.push(mean);
    Ok(rows)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let ck = formats::read_checkpoint(&a.checkpoint)?;
    let (views, images) = formats::read_eval_set(&a.targets)?;
    let rows = eval_rows(&ck, &views, &images)?;
    let bytes = formats::csv_bytes(&rows)?;
    match &a.out {
        Some(p) => formats::write_all(&[(p.clone(), bytes), (p.with_extension(MANIFEST), manifest("eval", a)?)]),
        None => {
            print!("{}", String::from_utf8_lossy(&bytes));
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RegisterArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Targets directory (its test split) or an image-set directory.
    #[arg(long)]
    pub targets: PathBuf,
    /// Which image of the set to register; its view is the ground truth.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Initial pose (JSON `Pose`). Without it and without perturbation
    /// flags the isocenter pose is used.
    #[arg(long)]
    pub init_pose: Option<PathBuf>,
    /// Start from the ground truth rotated by this many degrees about a
    /// seeded random axis.
    #[arg(long)]
    pub perturb_deg: Option<f64>,
    /// Start from the ground truth shifted by this many mm in a seeded
    /// random direction.
    #[arg(long)]
    pub perturb_mm: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Landmarks (JSON list of world points in mm) for the TRE.
    #[arg(long)]
    pub landmarks: Option<PathBuf>,
    /// Rotation step (radians).
    #[arg(long)]
    pub lr: Option<f64>,
    /// Translation step (mm).
    #[arg(long)]
    pub lr_translation: Option<f64>,
    /// Final fraction of both steps after exponential decay.
    #[arg(long)]
    pub lr_final_ratio: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Result file (JSON). Timing goes to `<out>.timing.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    pub pose: Pose,
    pub init_pose: Pose,
    pub gt_pose: Pose,
    pub rot_deg: f64,
    pub trans_mm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tre_mm: Option<f64>,
    pub iterations: usize,
    pub loss_trace: Vec<f64>,
    pub config: RegistrationConfig,
}

/// A unit vector from two seeded uniforms.
fn random_unit(rng: &mut impl FnMut() -> f64) -> Vec3 {
    let z = 2.0 * rng() - 1.0;
    let phi = 2.0 * std::f64::consts::PI * rng();
    let r = (1.0 - z * z).max(0.0).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

/// `gt` rotated by `deg` about a random object-frame axis and shifted by
/// `mm` in a random direction: `pose_errors` against `gt` is exactly
/// `(deg, mm)`.
pub fn perturbed_pose(gt: &Pose, deg: f64, mm: f64, seed: u64) -> Pose {
    use rand_like::SplitMix;
    let mut sm = SplitMix(seed);
    let mut u = || sm.next_f64();
    let axis = random_unit(&mut u);
    let dir = random_unit(&mut u);
    let q = math::quat_from_rotvec(math::scale(axis, deg.to_radians()));
    Pose::new(math::quat_mul(gt.rotation, q), math::add(gt.translation, math::scale(dir, mm)))
}

mod rand_like {
    /// Small seeded generator for perturbation directions.
    pub struct SplitMix(pub u64);

    impl SplitMix {
        pub fn next_f64(&mut self) -> f64 {
            self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = self.0;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            (z >> 11) as f64 / (1u64 << 53) as f64
        }
    }
}

/// Isocenter pose: looking at the world origin along the `+x` orbit
/// position at the ground truth's source distance.
pub fn isocenter_pose(gt: &CameraView) -> Pose {
    let d = math::norm(gt.pose.camera_center());
    CameraView::orbit(0.0, d, gt.intrinsics).pose
}

pub fn registration_config(a: &RegisterArgs) -> RegistrationConfig {
    let mut cfg = RegistrationConfig::default();
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.lr_translation {
        cfg.lr_translation = v;
    }
    if let Some(v) = a.lr_final_ratio {
        cfg.lr_final_ratio = v;
    }
    if let Some(v) = a.max_iters {
        cfg.max_iters = v;
    }
    if let Some(v) = a.tol {
        cfg.convergence_tol = v;
    }
    if let Some(v) = a.lambda {
        cfg.lambda = v;
    }
    cfg
}

pub fn run_register(a: &RegisterArgs) -> Result<(RegistrationReport, f64)> {
    let ck = formats::read_checkpoint(&a.checkpoint)?;
    let (views, images) = formats::read_eval_set(&a.targets)?;
    ensure!(a.index < views.len(), "index {} out of range ({} images)", a.index, views.len());
    let gt = views[a.index];
    let landmarks: Option<Vec<Vec3>> = a.landmarks.as_ref().map(|p| read_json(p)).transpose()?;
    if let Some(l) = &landmarks {
        ensure!(!l.is_empty(), "the landmark file is empty");
    }
    let init_pose = match (&a.init_pose, a.perturb_deg, a.perturb_mm) {
        (Some(p), None, None) => read_json::<Pose>(p)?,
        (Some(_), _, _) => bail!("--init-pose cannot be combined with perturbation flags"),
        (None, None, None) => isocenter_pose(&gt),
        (None, d, m) => perturbed_pose(&gt.pose, d.unwrap_or(0.0), m.unwrap_or(0.0), a.seed),
    };
    let cfg = registration_config(a);
    let init = CameraView::new(init_pose, gt.intrinsics);
    let mut c = clock();
    let res = register(&ck, &images[a.index], &init, &cfg, &mut c)?;
    let (rot_deg, trans_mm) = pose_errors(&res.pose, &gt.pose);
    let tre_mm = landmarks.as_deref().map(|l| target_registration_error(l, &res.pose, &gt.pose)).transpose()?;
    let report = RegistrationReport {
        pose: res.pose,
        init_pose,
        gt_pose: gt.pose,
        rot_deg,
        trans_mm,
        tre_mm,
        iterations: res.iterations_used,
        loss_trace: res.loss_trace,
        config: cfg,
    };
    Ok((report, res.wall_ms))
}

pub fn cmd_register(a: &RegisterArgs) -> Result<()> {
    let (report, wall_ms) = run_register(a)?;
    #[derive(Serialize)]
    struct Timing {
        wall_ms: f64,
    }
    formats::write_all(&[
        (a.out.clone(), json_bytes(&report)?),
        (a.out.with_extension("timing.json"), json_bytes(&Timing { wall_ms })?),
        (a.out.with_extension(MANIFEST), manifest("register", a)?),
    ])
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub volume: PathBuf,
    /// Views file; when omitted, `--n-views` seeded random views of the
    /// phantom protocol geometry are used.
    #[arg(long)]
    pub views: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub n_views: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [-90.0, 90.0], allow_hyphen_values = true)]
    pub range_deg: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub renderer: String,
    pub n_views: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub std_ms: f64,
}

fn summarize(name: &str, n_views: usize, mut t: Vec<f64>) -> BenchRow {
    let n = t.len() as f64;
    let mean = t.iter().sum::<f64>() / n;
    let var = t.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    t.sort_by(f64::total_cmp);
    let mid = t.len() / 2;
    let median = if t.len() % 2 == 1 { t[mid] } else { 0.5 * (t[mid - 1] + t[mid]) };
    BenchRow { renderer: name.into(), n_views, mean_ms: mean, median_ms: median, std_ms: var.sqrt() }
}

pub fn bench_views(a: &BenchArgs) -> Result<Vec<CameraView>> {
    let views = match &a.views {
        Some(p) => formats::read_views(p)?,
        None => {
            recipe::protocol_views(
                0,
                a.n_views,
                [a.range_deg[0], a.range_deg[1]],
                a.seed,
                recipe::intrinsics(),
                recipe::SOURCE_DISTANCE_MM,
            )
            .1
        }
    };
    ensure!(!views.is_empty(), "no views to benchmark");
    Ok(views)
}

pub fn run_bench(a: &BenchArgs) -> Result<Vec<BenchRow>> {
    ensure!(a.repeats >= 1, "--repeats must be >= 1");
    let ck = formats::read_checkpoint(&a.checkpoint)?;
    let ct = formats::read_volume(&a.volume)?;
    let v = hu_to_density(&ct, DEFAULT_HU_WINDOW, DEFAULT_MU_SCALE)?;
    let views = bench_views(a)?;
    let scene = Scene::new(&ck.iso, &ck.dir, &ck.model);
    let (mut ts, mut tr) = (Vec::new(), Vec::new());
    for _ in 0..a.repeats {
        for view in &views {
            let t0 = Instant::now();
            std::hint::black_box(render_image(&scene, view)?);
            ts.push(t0.elapsed().as_secs_f64() * 1e3);
            let t0 = Instant::now();
            std::hint::black_box(raw_projection(&v, view)?);
            tr.push(t0.elapsed().as_secs_f64() * 1e3);
        }
    }
    Ok(vec![summarize("splat", views.len(), ts), summarize("siddon", views.len(), tr)])
}

pub fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let rows = run_bench(a)?;
    formats::write_all(&[
        (a.out.clone(), formats::csv_bytes(&rows)?),
        (a.out.with_extension(MANIFEST), manifest("bench", a)?),
    ])
}
