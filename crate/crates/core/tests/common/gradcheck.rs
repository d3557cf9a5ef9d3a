//! Finite-difference oracle for the analytic rasterizer backward pass,
//! shared with the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xsplat_core::geometry::{perturb_pose, CameraView, Intrinsics};
use xsplat_core::gsmodel::{GaussianSet, RadiosityModel, SetKind};
use xsplat_core::splat::{render, render_backward, render_image, Scene};

/// Step on the unconstrained Gaussian and basis parameters.
const H: f64 = 1e-4;
/// Step on the pose twist; its lever arm is the source distance.
const H_POSE: f64 = 1e-6;
const REL_TOL: f64 = 1e-4;
const ABS_TOL: f64 = 1e-7;

struct Case {
    iso: GaussianSet,
    dir: GaussianSet,
    model: RadiosityModel,
    view: CameraView,
    weights: Vec<f64>,
}

fn random_set(rng: &mut ChaCha8Rng, kind: SetKind, n: usize, k: usize) -> GaussianSet {
    let mut s = GaussianSet::empty(kind, k);
    for _ in 0..n {
        s.positions.push([rng.gen_range(-9.0..9.0), rng.gen_range(-9.0..9.0), rng.gen_range(-9.0..9.0)]);
        s.rotations.push([
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ]);
        s.log_scales.push([rng.gen_range(0.0..1.3), rng.gen_range(0.0..1.3), rng.gen_range(0.0..1.3)]);
        s.opacity_logits.push(rng.gen_range(-3.0..0.0));
        for _ in 0..k {
            s.features.push(rng.gen_range(-1.0..1.0));
        }
    }
    s
}

fn case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = 4;
    let degree = 1 + (seed as usize % 2);
    let n_iso = 3 + (seed as usize % 5);
    let iso = random_set(&mut rng, SetKind::Isotropic, n_iso, k);
    let dir = random_set(&mut rng, SetKind::Directional, 10 - n_iso, k);
    let kl = degree * (degree + 2);
    let model = RadiosityModel::new(
        degree,
        k,
        (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        (0..kl * k).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let view = CameraView::orbit(rng.gen_range(-1.5..1.5), 200.0, Intrinsics::centered(250.0, 32, 32));
    let weights = (0..32 * 32).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Case { iso, dir, model, view, weights }
}

fn loss(c: &Case, iso: &GaussianSet, dir: &GaussianSet, model: &RadiosityModel, view: &CameraView) -> f64 {
    let img = render_image(&Scene::new(iso, dir, model), view).unwrap();
    img.pixels.iter().zip(&c.weights).map(|(p, w)| p * w).sum()
}

fn close(analytic: f64, numeric: f64, rel: f64) -> bool {
    (analytic - numeric).abs() <= ABS_TOL.max(rel * numeric.abs().max(analytic.abs()))
}

fn central(f: impl FnMut(f64) -> f64) -> f64 {
    central_with(H, f)
}

fn central_with(h: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

fn check_set(c: &Case, which: SetKind, analytic: &xsplat_core::splat::SetGradients, failures: &mut Vec<String>) {
    let base = if which == SetKind::Isotropic { &c.iso } else { &c.dir };
    let eval = |s: &GaussianSet| {
        if which == SetKind::Isotropic {
            loss(c, s, &c.dir, &c.model, &c.view)
        } else {
            loss(c, &c.iso, s, &c.model, &c.view)
        }
    };
    for i in 0..base.len() {
        for a in 0..3 {
            let num = central(|h| {
                let mut s = base.clone();
                s.positions[i][a] += h;
                eval(&s)
            });
            if !close(analytic.positions[i][a], num, REL_TOL) {
                failures.push(format!("{which:?}[{i}] position[{a}]: {} vs {num}", analytic.positions[i][a]));
            }
            let num = central(|h| {
                let mut s = base.clone();
                s.log_scales[i][a] += h;
                eval(&s)
            });
            if !close(analytic.log_scales[i][a], num, REL_TOL) {
                failures.push(format!("{which:?}[{i}] log_scale[{a}]: {} vs {num}", analytic.log_scales[i][a]));
            }
        }
        for a in 0..4 {
            let num = central(|h| {
                let mut s = base.clone();
                s.rotations[i][a] += h;
                eval(&s)
            });
            if !close(analytic.rotations[i][a], num, REL_TOL) {
                failures.push(format!("{which:?}[{i}] rotation[{a}]: {} vs {num}", analytic.rotations[i][a]));
            }
        }
        let num = central(|h| {
            let mut s = base.clone();
            s.opacity_logits[i] += h;
            eval(&s)
        });
        if !close(analytic.opacity_logits[i], num, REL_TOL) {
            failures.push(format!("{which:?}[{i}] opacity: {} vs {num}", analytic.opacity_logits[i]));
        }
        for a in 0..base.k {
            let num = central(|h| {
                let mut s = base.clone();
                s.features[i * base.k + a] += h;
                eval(&s)
            });
            let g = analytic.features[i * base.k + a];
            if !close(g, num, REL_TOL) {
                failures.push(format!("{which:?}[{i}] feature[{a}]: {g} vs {num}"));
            }
        }
    }
}

fn pose_nonzero(p: &Option<[f64; 6]>) -> bool {
    p.is_some_and(|p| p.iter().any(|v| v.abs() > 1e-6))
}

/// Checks every analytic gradient of the given seeded scenes; returns one
/// line per mismatch.
pub fn check_seeds(seeds: std::ops::Range<u64>) -> Vec<String> {
    let mut failures = Vec::new();
    for seed in seeds {
        let c = case(seed);
        let scene = Scene::new(&c.iso, &c.dir, &c.model);
        let (_, state) = render(&scene, &c.view).unwrap();
        let g = render_backward(&scene, &state, &c.weights, true).unwrap();
        if !(g.iso.is_finite() && g.dir.is_finite()) {
            return vec![format!("seed {seed}: non-finite gradient")];
        }
        let visible = g.iso.visible.iter().chain(&g.dir.visible).filter(|v| **v).count();
        if visible < 8 || !pose_nonzero(&g.pose) {
            return vec![format!("seed {seed}: degenerate scene ({visible} visible)")];
        }

        check_set(&c, SetKind::Isotropic, &g.iso, &mut failures);
        check_set(&c, SetKind::Directional, &g.dir, &mut failures);

        for j in 0..c.model.b_iso.len() {
            let num = central(|h| {
                let mut m = c.model.clone();
                m.b_iso[j] += h;
                loss(&c, &c.iso, &c.dir, &m, &c.view)
            });
            if !close(g.b_iso[j], num, REL_TOL) {
                failures.push(format!("seed {seed} b_iso[{j}]: {} vs {num}", g.b_iso[j]));
            }
        }
        for j in 0..c.model.b_dir.len() {
            let num = central(|h| {
                let mut m = c.model.clone();
                m.b_dir[j] += h;
                loss(&c, &c.iso, &c.dir, &m, &c.view)
            });
            if !close(g.b_dir[j], num, REL_TOL) {
                failures.push(format!("seed {seed} b_dir[{j}]: {} vs {num}", g.b_dir[j]));
            }
        }
        let pose = g.pose.unwrap();
        for j in 0..6 {
            let num = central_with(H_POSE, |h| {
                let mut d = [0.0; 6];
                d[j] = h;
                let v = CameraView::new(perturb_pose(&c.view.pose, &d), c.view.intrinsics);
                loss(&c, &c.iso, &c.dir, &c.model, &v)
            });
            if !close(pose[j], num, REL_TOL) {
                failures.push(format!("seed {seed} pose[{j}]: {} vs {num}", pose[j]));
            }
        }
        if !failures.is_empty() {
            failures.insert(0, format!("seed {seed}"));
            break;
        }
    }
    failures
}
