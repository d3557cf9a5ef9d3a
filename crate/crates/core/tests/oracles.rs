//! Independent numerical oracles: quadrature, statistics, finite
//! differences and small end-to-end experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xsplat_core::drrcast::{orbit_views, render_targets, siddon_integral, AnisoPerturbSpec};
use xsplat_core::geometry::{
    perturb_pose, project_covariance, project_point, CameraView, Intrinsics, Pose, EPS_LOWPASS,
};
use xsplat_core::gsmodel::{covariance_from, Checkpoint, RadiosityModel, DEFAULT_FEATURE_DIM};
use xsplat_core::math::{self, Vec3};
use xsplat_core::rads::{density_weighted_indices, rads_init};
use xsplat_core::registration::{pose_errors, register, RegistrationConfig};
use xsplat_core::sh::{basis_len, eval_sh_basis};
use xsplat_core::splat::{render_image, RenderedImage, Scene};
use xsplat_core::train::{loss, mean_loss, ssim, TrainConfig, Trainer};
use xsplat_core::volume::{
    hu_to_density, make_phantom, AttenuationVolume, Grid, PhantomSpec, DEFAULT_HU_WINDOW, DEFAULT_MU_SCALE,
};

fn sphere_volume(n: usize, radius: f64) -> AttenuationVolume {
    let ct = make_phantom(&PhantomSpec::sphere(n, radius, 1000.0, -1000.0)).unwrap();
    hu_to_density(&ct, DEFAULT_HU_WINDOW, DEFAULT_MU_SCALE).unwrap()
}

#[test]
fn sh_basis_is_orthonormal_on_the_sphere() {
    let l = 2;
    let m = basis_len(l);
    let n = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut gram = vec![0.0; m * m];
    for _ in 0..n {
        let theta = libm::acos(rng.gen_range(-1.0..1.0f64));
        let phi = rng.gen_range(-core::f64::consts::PI..core::f64::consts::PI);
        let y = eval_sh_basis(theta, phi, l).unwrap();
        for i in 0..m {
            for j in 0..m {
                gram[i * m + j] += y[i] * y[j];
            }
        }
    }
    let w = 4.0 * core::f64::consts::PI / n as f64;
    for i in 0..m {
        for j in 0..m {
            let g = gram[i * m + j] * w;
            if i == j {
                assert!((g - 1.0).abs() < 0.01, "diagonal {i}: {g}");
            } else {
                assert!(g.abs() < 1e-2, "off-diagonal ({i},{j}): {g}");
            }
        }
    }
}

/// Entry and exit parameters of `src + t·d` through the box, or `None`.
fn box_clip(lo: Vec3, hi: Vec3, src: Vec3, d: Vec3) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for a in 0..3 {
        if d[a] == 0.0 {
            if src[a] < lo[a] || src[a] > hi[a] {
                return None;
            }
            continue;
        }
        let (p, q) = ((lo[a] - src[a]) / d[a], (hi[a] - src[a]) / d[a]);
        t0 = t0.max(p.min(q));
        t1 = t1.min(p.max(q));
    }
    (t1 > t0).then_some((t0, t1))
}

fn density_at(v: &AttenuationVolume, p: Vec3) -> f64 {
    let g = v.grid();
    let mut idx = [0usize; 3];
    for a in 0..3 {
        let f = libm::floor((p[a] - g.origin[a]) / g.spacing[a] + 0.5);
        if f < 0.0 || f >= g.dims[a] as f64 {
            return 0.0;
        }
        idx[a] = f as usize;
    }
    v.density()[g.index(idx[0], idx[1], idx[2])] * v.mu_scale()
}

/// Midpoint ray march with steps of `frac` voxel spacings.
fn ray_march(v: &AttenuationVolume, src: Vec3, dst: Vec3, frac: f64) -> f64 {
    let len = math::norm(math::sub(dst, src));
    let d = math::scale(math::sub(dst, src), 1.0 / len);
    let (lo, hi) = v.grid().bounds();
    let Some((t0, t1)) = box_clip(lo, hi, src, d) else { return 0.0 };
    let (t0, t1) = (t0.max(0.0), t1.min(len));
    if t1 <= t0 {
        return 0.0;
    }
    let n = libm::ceil((t1 - t0) / (frac * v.grid().spacing[0])) as usize;
    let dt = (t1 - t0) / n as f64;
    (0..n).map(|i| density_at(v, math::add(src, math::scale(d, t0 + (i as f64 + 0.5) * dt))) * dt).sum()
}

#[test]
fn oblique_ray_through_uniform_slab_matches_ray_march() {
    let grid = Grid::centered([8, 8, 8], [1.0; 3]).unwrap();
    let v = AttenuationVolume::new(grid, vec![0.7; 512], 0.02).unwrap();
    let d = math::scale([1.0, 0.0, 1.0], 1.0 / 2f64.sqrt());
    for off in [0.0, 0.3, -1.7] {
        let src = math::add([off, 0.25, 0.0], math::scale(d, -20.0));
        let dst = math::add([off, 0.25, 0.0], math::scale(d, 20.0));
        let exact = siddon_integral(&v, src, dst).unwrap();
        let march = ray_march(&v, src, dst, 1e-3);
        assert!(exact > 0.0);
        assert!((exact - march).abs() <= 1e-6 * exact, "offset {off}: {exact} vs {march}");
    }
}

#[test]
fn oblique_ray_through_random_densities_matches_ray_march() {
    let grid = Grid::centered([8, 8, 8], [1.0; 3]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let density: Vec<f64> = (0..512).map(|_| rng.gen_range(0.0..1.0)).collect();
    let v = AttenuationVolume::new(grid, density, 1.0).unwrap();
    let d = math::scale([1.0, 0.0, 1.0], 1.0 / 2f64.sqrt());
    let src = math::add([0.1, 0.25, 0.0], math::scale(d, -20.0));
    let dst = math::add([0.1, 0.25, 0.0], math::scale(d, 20.0));
    let exact = siddon_integral(&v, src, dst).unwrap();
    // Each of the ~16 boundary crossings costs at most one step of density.
    let march = ray_march(&v, src, dst, 1e-4);
    assert!((exact - march).abs() <= 1e-3 * exact, "{exact} vs {march}");
}

#[test]
fn uniform_density_draws_pass_chi_square() {
    let grid = Grid::centered([4, 4, 4], [1.0; 3]).unwrap();
    let v = AttenuationVolume::new(grid, vec![0.5; 64], 1.0).unwrap();
    let n = 64_000;
    let mut counts = [0usize; 64];
    for i in density_weighted_indices(&v, n, 21).unwrap() {
        counts[i] += 1;
    }
    let e = n as f64 / 64.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e) * (c as f64 - e) / e).sum();
    // Wilson-Hilferty upper quantile at alpha = 0.01.
    let k = 63.0f64;
    let z = 2.326_347_874f64;
    let crit = k * (1.0 - 2.0 / (9.0 * k) + z * (2.0 / (9.0 * k)).sqrt()).powi(3);
    assert!(chi2 < crit, "chi2 {chi2} >= {crit}");
}

#[test]
fn projected_covariance_matches_numerical_jacobian() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let intr = Intrinsics::centered(300.0, 64, 64);
    for _ in 0..50 {
        let axis: Vec3 = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let view = CameraView::new(
            perturb_pose(
                &CameraView::orbit(rng.gen_range(-3.0..3.0), 150.0, intr).pose,
                &[axis[0] * 0.1, axis[1] * 0.1, axis[2] * 0.1, 0.0, 0.0, 0.0],
            ),
            intr,
        );
        let mu: Vec3 = [rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0)];
        let q = math::quat_normalize([
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ]);
        let sigma = covariance_from([rng.gen_range(-1.0..1.5), rng.gen_range(-1.0..1.5), rng.gen_range(-1.0..1.5)], q);

        let h = 1e-4;
        let mut jac = [[0.0; 3]; 2];
        for c in 0..3 {
            let (mut a, mut b) = (mu, mu);
            a[c] += h;
            b[c] -= h;
            let (pa, _) = project_point(&view, a).unwrap();
            let (pb, _) = project_point(&view, b).unwrap();
            for r in 0..2 {
                jac[r][c] = (pa[r] - pb[r]) / (2.0 * h);
            }
        }
        let e = |i: usize, j: usize| {
            let mut s = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    s += jac[i][a] * sigma[a][b] * jac[j][b];
                }
            }
            s
        };
        let expect = [e(0, 0) + EPS_LOWPASS, e(0, 1), e(1, 1) + EPS_LOWPASS];
        let got = project_covariance(&view, mu, &sigma).unwrap();
        let scale = expect[0].abs().max(expect[2].abs());
        for i in 0..3 {
            assert!((got[i] - expect[i]).abs() <= 1e-6 * scale, "{got:?} vs {expect:?}");
        }
    }
}

/// Direct 2-D windowed SSIM: every pixel sums its own 11×11 neighborhood.
fn reference_ssim(a: &RenderedImage, b: &RenderedImage) -> f64 {
    let (w, h) = (a.width as isize, a.height as isize);
    let sigma = 1.5f64;
    let mut win = [[0.0; 11]; 11];
    let mut total = 0.0;
    for (dy, row) in win.iter_mut().enumerate() {
        for (dx, v) in row.iter_mut().enumerate() {
            let (u, t) = (dx as f64 - 5.0, dy as f64 - 5.0);
            *v = (-(u * u + t * t) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (1e-4, 9e-4);
    let mut acc = 0.0;
    for y in 0..h {
        for x in 0..w {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in -5..=5isize {
                for dx in -5..=5isize {
                    let (px, py) = (x + dx, y + dy);
                    if px < 0 || py < 0 || px >= w || py >= h {
                        continue;
                    }
                    let g = win[(dy + 5) as usize][(dx + 5) as usize] / total;
                    let (p, q) = (a.at(px as usize, py as usize), b.at(px as usize, py as usize));
                    mx += g * p;
                    my += g * q;
                    xx += g * p * p;
                    yy += g * q * q;
                    xy += g * p * q;
                }
            }
            let (sx, sy, sxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
            acc += (2.0 * mx * my + c1) * (2.0 * sxy + c2) / ((mx * mx + my * my + c1) * (sx + sy + c2));
        }
    }
    acc / (w * h) as f64
}

#[test]
fn ssim_matches_direct_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (w, h) in [(16, 16), (23, 9), (40, 31)] {
        let a = RenderedImage::new(w, h, (0..w * h).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let b = RenderedImage::new(
            w,
            h,
            a.pixels.iter().map(|p| (p + rng.gen_range(-0.2..0.2f64)).clamp(0.0, 1.0)).collect(),
        )
        .unwrap();
        let (got, want) = (ssim(&a, &b).unwrap(), reference_ssim(&a, &b));
        assert!((got - want).abs() < 1e-6, "{w}x{h}: {got} vs {want}");
    }
}

#[test]
fn isotropic_targets_of_a_sphere_match_across_views() {
    let v = sphere_volume(24, 8.0);
    let views = orbit_views(&[0.0, core::f64::consts::FRAC_PI_2], 200.0, Intrinsics::centered(160.0, 32, 32));
    let set = render_targets(&v, &views, None).unwrap();
    for (p, q) in set.images[0].pixels.iter().zip(&set.images[1].pixels) {
        assert!((p - q).abs() < 1e-9, "{p} vs {q}");
    }
}

#[test]
fn perturbed_targets_differ_within_the_modulation_bound() {
    let v = sphere_volume(24, 8.0);
    let views = orbit_views(&[0.0, core::f64::consts::FRAC_PI_2], 200.0, Intrinsics::centered(160.0, 32, 32));
    let set = render_targets(&v, &views, Some(AnisoPerturbSpec::new(0.1).unwrap())).unwrap();
    let (lo, hi) = (0.9 / 1.1, 1.1 / 0.9);
    let mut max_diff = 0.0f64;
    for (p, q) in set.images[0].pixels.iter().zip(&set.images[1].pixels) {
        max_diff = max_diff.max((p - q).abs());
        if *p > 1e-3 && *q > 1e-3 {
            let r = p / q;
            assert!((lo..=hi).contains(&r), "ratio {r}");
        }
    }
    assert!(max_diff > 1e-3, "views identical under perturbation");
}

fn sphere_checkpoint(v: &AttenuationVolume, seed: u64) -> Checkpoint {
    let (iso, dir) = rads_init(v, 150, 150, seed).unwrap();
    Checkpoint::new(iso, dir, RadiosityModel::random(2, DEFAULT_FEATURE_DIM, seed).unwrap()).unwrap()
}

fn small_targets(v: &AttenuationVolume, n: usize) -> xsplat_core::drrcast::TargetImageSet {
    let angles: Vec<f64> = (0..n).map(|i| -1.5 + 3.0 * i as f64 / (n - 1) as f64).collect();
    render_targets(v, &orbit_views(&angles, 200.0, Intrinsics::centered(160.0, 32, 32)), None).unwrap()
}

#[test]
fn training_reduces_loss_over_500_iterations() {
    let v = sphere_volume(24, 8.0);
    let targets = small_targets(&v, 8);
    let cfg = TrainConfig { iterations: 500, seed: 1, ..TrainConfig::default() };
    let before = mean_loss(&sphere_checkpoint(&v, 1), &targets, cfg.lambda).unwrap();
    let mut t = Trainer::new(&targets, sphere_checkpoint(&v, 1), cfg).unwrap();
    let mut steps = Vec::new();
    for _ in 0..500 {
        steps.push(t.step().unwrap());
    }
    let after = mean_loss(t.checkpoint(), &targets, 0.2).unwrap();
    assert!(after < before, "{before} -> {after}");
    let head: f64 = steps[..50].iter().sum::<f64>() / 50.0;
    let tail: f64 = steps[450..].iter().sum::<f64>() / 50.0;
    assert!(tail < head, "window means {head} -> {tail}");
}

#[test]
fn counts_change_only_on_densify_steps_and_rotations_stay_unit() {
    let v = sphere_volume(24, 8.0);
    let targets = small_targets(&v, 6);
    let cfg = TrainConfig {
        iterations: 90,
        densify_from: 20,
        densify_interval: 10,
        densify_until: 70,
        densify_grad_threshold: 1e-6,
        seed: 2,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(&targets, sphere_checkpoint(&v, 2), cfg.clone()).unwrap();
    let mut counts = (t.checkpoint().iso.len(), t.checkpoint().dir.len());
    let mut changed = false;
    for _ in 0..cfg.iterations {
        t.step().unwrap();
        let it = t.iteration();
        let c = t.checkpoint();
        let now = (c.iso.len(), c.dir.len());
        let densify_step = it >= cfg.densify_from && it < cfg.densify_until && it % cfg.densify_interval == 0;
        if now != counts {
            assert!(densify_step, "count changed at iteration {it}");
            changed = true;
        }
        counts = now;
        for q in c.iso.rotations.iter().chain(&c.dir.rotations) {
            assert!((math::quat_norm(*q) - 1.0).abs() < 1e-12, "iteration {it}: |q| = {}", math::quat_norm(*q));
        }
    }
    assert!(changed, "low threshold should have densified");
}

fn registration_setup() -> (Checkpoint, CameraView, RenderedImage) {
    let v = sphere_volume(24, 8.0);
    let mut c = sphere_checkpoint(&v, 4);
    // Break the sphere's rotational symmetry so the pose is identifiable.
    for p in c.iso.positions.iter_mut().chain(c.dir.positions.iter_mut()) {
        p[0] *= 1.4;
        p[2] *= 0.7;
    }
    let gt = CameraView::orbit(0.4, 200.0, Intrinsics::centered(160.0, 32, 32));
    let target = render_image(&Scene::new(&c.iso, &c.dir, &c.model), &gt).unwrap();
    (c, gt, target)
}

fn no_clock() -> impl FnMut() -> f64 {
    || 0.0
}

#[test]
fn registration_single_iteration_traces_once() {
    let (c, gt, target) = registration_setup();
    let init = CameraView::new(perturb_pose(&gt.pose, &[0.02, -0.03, 0.01, 1.0, 2.0, -1.0]), gt.intrinsics);
    let cfg = RegistrationConfig { max_iters: 1, ..RegistrationConfig::default() };
    let r = register(&c, &target, &init, &cfg, &mut no_clock()).unwrap();
    assert_eq!(r.loss_trace.len(), 1);
    assert_eq!(r.iterations_used, 1);
    assert_eq!(r.pose, init.pose);
}

#[test]
fn registration_keeps_the_ground_truth_pose() {
    let (c, gt, target) = registration_setup();
    let r = register(&c, &target, &gt, &RegistrationConfig::default(), &mut no_clock()).unwrap();
    let (rot, trans) = pose_errors(&r.pose, &gt.pose);
    assert!(rot < 1e-3 && trans < 1e-2, "{rot} deg, {trans} mm");
}

#[test]
fn registration_never_returns_a_worse_pose() {
    let (c, gt, target) = registration_setup();
    let scene = Scene::new(&c.iso, &c.dir, &c.model);
    let eval = |p: &Pose| {
        let img = render_image(&scene, &CameraView::new(*p, gt.intrinsics)).unwrap();
        loss(&img, &target, 0.2).unwrap().0
    };
    for (i, d) in [[0.05, 0.0, -0.04, 3.0, -2.0, 4.0], [-0.06, 0.03, 0.02, -5.0, 1.0, 2.0]].iter().enumerate() {
        let init = CameraView::new(perturb_pose(&gt.pose, d), gt.intrinsics);
        let cfg = RegistrationConfig { max_iters: 60, ..RegistrationConfig::default() };
        let r = register(&c, &target, &init, &cfg, &mut no_clock()).unwrap();
        let (l0, l1) = (eval(&init.pose), eval(&r.pose));
        assert!(l1 <= l0, "case {i}: {l0} -> {l1}");
        assert!(l1 < l0, "case {i}: no progress from {l0}");
    }
}

/// Variance over uniform directions of the directional logit, averaged over
/// the directional set. The basis has no constant term, so each logit has
/// zero mean and variance `|B f|² / 4π`.
fn dir_logit_variance(c: &Checkpoint) -> f64 {
    let n = c.dir.len();
    let total: f64 = (0..n).map(|i| c.model.dir_projection(c.dir.feature(i)).iter().map(|v| v * v).sum::<f64>()).sum();
    total / (4.0 * core::f64::consts::PI * n as f64)
}

#[test]
fn closed_form_logit_variance_matches_sampling() {
    let v = sphere_volume(24, 8.0);
    let mut c = sphere_checkpoint(&v, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    c.dir.features.iter_mut().for_each(|f| *f = rng.gen_range(-1.0..1.0));
    let n = 200_000;
    let mut acc = 0.0;
    for i in 0..c.dir.len() {
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n / c.dir.len() {
            let theta = libm::acos(rng.gen_range(-1.0..1.0f64));
            let phi = rng.gen_range(-core::f64::consts::PI..core::f64::consts::PI);
            let l = xsplat_core::gsmodel::dir_logit(c.dir.feature(i), theta, phi, &c.model).unwrap();
            s += l;
            s2 += l * l;
        }
        let m = (n / c.dir.len()) as f64;
        acc += s2 / m - (s / m) * (s / m);
    }
    let sampled = acc / c.dir.len() as f64;
    let closed = dir_logit_variance(&c);
    assert!((sampled - closed).abs() < 0.05 * closed, "{sampled} vs {closed}");
}

#[test]
fn isotropic_targets_learn_flatter_directional_logits() {
    let v = sphere_volume(24, 8.0);
    let angles: Vec<f64> = (0..8).map(|i| -1.5 + 3.0 * i as f64 / 7.0).collect();
    let views = orbit_views(&angles, 200.0, Intrinsics::centered(160.0, 32, 32));
    let mut out = Vec::new();
    for eps in [0.0, 0.1] {
        let perturb = (eps > 0.0).then(|| AnisoPerturbSpec::new(eps).unwrap());
        let targets = render_targets(&v, &views, perturb).unwrap();
        let cfg = TrainConfig { iterations: 500, seed: 8, ..TrainConfig::default() };
        let mut t = Trainer::new(&targets, sphere_checkpoint(&v, 8), cfg).unwrap();
        for _ in 0..500 {
            t.step().unwrap();
        }
        out.push(dir_logit_variance(t.checkpoint()));
    }
    assert!(out[0] < out[1], "variance without anisotropy {} >= with {}", out[0], out[1]);
}
