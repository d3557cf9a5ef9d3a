//! Optimization of a model against a target image set.

mod adam;
mod density;
mod loss;

pub use adam::{adam_step, AdamState, GroupRates, Moments, SetMoments, BETA1, BETA2, EPSILON};
pub use density::{densify_and_prune, densify_set, DensifyOutcome, DensifyParams, GradStats, SPLIT_SCALE_DIVISOR};
pub use loss::{gaussian_taps, loss, ssim, ssim_with_grad, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::drrcast::TargetImageSet;
use crate::error::{Error, Result};
use crate::geometry::CameraView;
use crate::gsmodel::Checkpoint;
use crate::math;
use crate::metrics::psnr;
use crate::splat::{render, render_backward, render_image, RenderedImage, Scene};

/// Iterations at which a log row is written (plus the final iteration).
pub const LOG_CHECKPOINTS: [usize; 5] = [500, 2000, 7000, 15000, 30000];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub iterations: usize,
    pub lr_basis: f64,
    pub lr_features: f64,
    /// Initial positional step, multiplied by the scene extent.
    pub lr_position: f64,
    /// Positional step reached at the last iteration (exponential decay).
    pub lr_position_final: f64,
    pub lr_rotation: f64,
    pub lr_scale: f64,
    pub lr_opacity: f64,
    pub densify_from: usize,
    pub densify_interval: usize,
    pub densify_until: usize,
    pub densify_grad_threshold: f64,
    pub prune_opacity_threshold: f64,
    /// Largest scale, as a fraction of the scene extent, that is cloned
    /// rather than split.
    pub percent_dense: f64,
    pub seed: u64,
    pub log_checkpoints: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            iterations: 30_000,
            lr_basis: 1.25e-4,
            lr_features: 2.5e-3,
            lr_position: 1.6e-4,
            lr_position_final: 1.6e-6,
            lr_rotation: 1e-3,
            lr_scale: 5e-3,
            lr_opacity: 5e-2,
            densify_from: 500,
            densify_interval: 100,
            densify_until: 15_000,
            densify_grad_threshold: 2e-4,
            prune_opacity_threshold: 0.005,
            percent_dense: 0.01,
            seed: 0,
            log_checkpoints: LOG_CHECKPOINTS.to_vec(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(alloc::format!("lambda must be in [0, 1], got {}", self.lambda)));
        }
        let rates = [
            ("lr_basis", self.lr_basis),
            ("lr_features", self.lr_features),
            ("lr_position", self.lr_position),
            ("lr_position_final", self.lr_position_final),
            ("lr_rotation", self.lr_rotation),
            ("lr_scale", self.lr_scale),
            ("lr_opacity", self.lr_opacity),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(alloc::format!("{name} must be > 0, got {v}")));
            }
        }
        if self.densify_interval == 0 {
            return Err(Error::InvalidArgument("densify_interval must be >= 1".into()));
        }
        Ok(())
    }

    /// Positional step at `iteration` (before the extent scaling).
    pub fn position_lr(&self, iteration: usize) -> f64 {
        let t = if self.iterations == 0 { 1.0 } else { (iteration as f64 / self.iterations as f64).min(1.0) };
        math::exp(math::ln(self.lr_position) * (1.0 - t) + math::ln(self.lr_position_final) * t)
    }
}

/// Radius of the camera centers around their mean, padded by 10%.
pub fn scene_extent(views: &[CameraView]) -> f64 {
    if views.is_empty() {
        return 1.0;
    }
    let centers: Vec<_> = views.iter().map(|v| v.pose.camera_center()).collect();
    let mut mean = [0.0; 3];
    for c in &centers {
        mean = math::add(mean, *c);
    }
    mean = math::scale(mean, 1.0 / centers.len() as f64);
    let r = centers.iter().map(|c| math::norm(math::sub(*c, mean))).fold(0.0, f64::max);
    if r > 0.0 {
        1.1 * r
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    /// Mean training loss over every training view.
    pub loss: f64,
    /// Mean PSNR over the held-out views (NaN when there are none).
    pub psnr_holdout: f64,
    pub n_iso: usize,
    pub n_dir: usize,
    pub wall_ms: f64,
}

/// Mean loss of `c` over a target set.
pub fn mean_loss(c: &Checkpoint, targets: &TargetImageSet, lambda: f64) -> Result<f64> {
    let scene = Scene::new(&c.iso, &c.dir, &c.model);
    let mut total = 0.0;
    for (view, img) in targets.views.iter().zip(&targets.images) {
        total += loss(&render_image(&scene, view)?, img, lambda)?.0;
    }
    Ok(total / targets.len().max(1) as f64)
}

/// Mean PSNR and SSIM of `c` over a target set.
pub fn evaluate(c: &Checkpoint, targets: &TargetImageSet) -> Result<(f64, f64)> {
    let scene = Scene::new(&c.iso, &c.dir, &c.model);
    let (mut p, mut s) = (0.0, 0.0);
    for (view, img) in targets.views.iter().zip(&targets.images) {
        let r = render_image(&scene, view)?;
        p += psnr(&r, img)?;
        s += ssim(&r, img)?;
    }
    let n = targets.len().max(1) as f64;
    Ok((p / n, s / n))
}

/// Stepwise training loop. One target view per iteration, drawn from a
/// seeded shuffle that is redrawn every epoch.
pub struct Trainer<'a> {
    targets: &'a TargetImageSet,
    cfg: TrainConfig,
    checkpoint: Checkpoint,
    adam: AdamState,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    iteration: usize,
    stats: (GradStats, GradStats),
    extent: f64,
    last_loss: f64,
}

impl<'a> Trainer<'a> {
    pub fn new(targets: &'a TargetImageSet, init: Checkpoint, cfg: TrainConfig) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::NoViews);
        }
        cfg.validate()?;
        init.validate()?;
        for (v, img) in targets.views.iter().zip(&targets.images) {
            if (v.intrinsics.width, v.intrinsics.height) != (img.width, img.height) {
                return Err(Error::DimensionMismatch(v.intrinsics.width, v.intrinsics.height, img.width, img.height));
            }
        }
        let stats = (GradStats::zeros(init.iso.len()), GradStats::zeros(init.dir.len()));
        Ok(Self {
            extent: scene_extent(&targets.views),
            adam: AdamState::new(&init),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            order: Vec::new(),
            cursor: 0,
            iteration: 0,
            stats,
            checkpoint: init,
            targets,
            cfg,
            last_loss: f64::NAN,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.checkpoint
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        self.checkpoint
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    /// Loss of the most recent step.
    pub fn last_loss(&self) -> f64 {
        self.last_loss
    }

    fn next_view(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order = (0..self.targets.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    fn rates(&self) -> GroupRates {
        GroupRates {
            position: self.cfg.position_lr(self.iteration) * self.extent,
            rotation: self.cfg.lr_rotation,
            scale: self.cfg.lr_scale,
            opacity: self.cfg.lr_opacity,
            features: self.cfg.lr_features,
            basis: self.cfg.lr_basis,
        }
    }

    /// Runs one iteration and returns its loss.
    pub fn step(&mut self) -> Result<f64> {
        let vi = self.next_view();
        let view = &self.targets.views[vi];
        let target = &self.targets.images[vi];
        let c = &self.checkpoint;
        let scene = Scene::new(&c.iso, &c.dir, &c.model);
        let (img, state) = render(&scene, view)?;
        let (l, dl) = loss(&img, target, self.cfg.lambda)?;
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss(self.iteration + 1));
        }
        let grads = render_backward(&scene, &state, &dl, false)?;
        let rates = self.rates();
        adam_step(&mut self.checkpoint, &grads, &mut self.adam, &rates)?;
        self.iteration += 1;
        self.last_loss = l;

        let it = self.iteration;
        if it < self.cfg.densify_until {
            self.stats.0.add(&grads.iso);
            self.stats.1.add(&grads.dir);
            if it >= self.cfg.densify_from && it.is_multiple_of(self.cfg.densify_interval) {
                self.densify();
            }
        }
        Ok(l)
    }

    fn densify(&mut self) {
        let p = DensifyParams {
            grad_threshold: self.cfg.densify_grad_threshold,
            prune_opacity: self.cfg.prune_opacity_threshold,
            clone_max_scale: self.cfg.percent_dense * self.extent,
        };
        let c = &mut self.checkpoint;
        let (a, b) = densify_and_prune(&mut c.iso, &mut c.dir, (&self.stats.0, &self.stats.1), &p, &mut self.rng);
        let k = c.model.k;
        self.adam.iso = self.adam.iso.remap(k, &a.rows);
        self.adam.dir = self.adam.dir.remap(k, &b.rows);
        self.stats = (GradStats::zeros(c.iso.len()), GradStats::zeros(c.dir.len()));
    }

    /// Log row for the current state.
    pub fn log_row(&self, holdout: Option<&TargetImageSet>, wall_ms: f64) -> Result<LogRow> {
        let psnr_holdout = match holdout {
            Some(h) if !h.is_empty() => evaluate(&self.checkpoint, h)?.0,
            _ => f64::NAN,
        };
        Ok(LogRow {
            iteration: self.iteration,
            loss: mean_loss(&self.checkpoint, self.targets, self.cfg.lambda)?,
            psnr_holdout,
            n_iso: self.checkpoint.iso.len(),
            n_dir: self.checkpoint.dir.len(),
            wall_ms,
        })
    }
}

/// Runs the full schedule. `clock` returns elapsed milliseconds and is
/// only used for the log; logging time is excluded from it.
pub fn train(
    targets: &TargetImageSet,
    holdout: Option<&TargetImageSet>,
    init: Checkpoint,
    cfg: &TrainConfig,
    clock: &mut dyn FnMut() -> f64,
) -> Result<(Checkpoint, Vec<LogRow>)> {
    let mut t = Trainer::new(targets, init, cfg.clone())?;
    let mut log = Vec::new();
    let mut spent = 0.0;
    let mut mark = clock();
    for _ in 0..cfg.iterations {
        t.step()?;
        let it = t.iteration();
        if cfg.log_checkpoints.contains(&it) || it == cfg.iterations {
            let now = clock();
            spent += now - mark;
            log.push(t.log_row(holdout, spent)?);
            mark = clock();
        }
    }
    if cfg.iterations == 0 {
        log.push(t.log_row(holdout, 0.0)?);
    }
    Ok((t.into_checkpoint(), log))
}

/// Renders every view of `targets` with `c`.
pub fn render_all(c: &Checkpoint, views: &[CameraView]) -> Result<Vec<RenderedImage>> {
    let scene = Scene::new(&c.iso, &c.dir, &c.model);
    views.iter().map(|v| render_image(&scene, v)).collect()
}
