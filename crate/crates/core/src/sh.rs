//! Real orthonormal spherical harmonics of degrees `1..=L` (no constant
//! term), evaluated as polynomials of a unit direction so that their
//! gradients come out of the same recursion.
//!
//! Within a degree the order is `m = -l..=l`; `m < 0` uses `sin(|m|φ)` and
//! `m > 0` uses `cos(mφ)`. No Condon–Shortley phase, so degree 1 is
//! `c·(y, z, x)` with `c = √(3/4π)`.

use core::f64::consts::PI;
use core::ops::{Add, Mul, Sub};

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, Vec3};

/// Number of basis functions for degrees `1..=l`.
pub const fn basis_len(l: usize) -> usize {
    l * (l + 2)
}

/// Value plus gradient with respect to `(x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Dual3 {
    v: f64,
    g: [f64; 3],
}

impl Dual3 {
    const fn constant(v: f64) -> Self {
        Self { v, g: [0.0; 3] }
    }

    const fn var(v: f64, axis: usize) -> Self {
        let mut g = [0.0; 3];
        g[axis] = 1.0;
        Self { v, g }
    }
}

impl Add for Dual3 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { v: self.v + o.v, g: [self.g[0] + o.g[0], self.g[1] + o.g[1], self.g[2] + o.g[2]] }
    }
}

impl Sub for Dual3 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self { v: self.v - o.v, g: [self.g[0] - o.g[0], self.g[1] - o.g[1], self.g[2] - o.g[2]] }
    }
}

impl Mul for Dual3 {
    type Output = Self;
    // product rule
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn mul(self, o: Self) -> Self {
        Self { v: self.v * o.v, g: core::array::from_fn(|i| self.g[i] * o.v + self.v * o.g[i]) }
    }
}

impl Mul<f64> for Dual3 {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self { v: self.v * s, g: [self.g[0] * s, self.g[1] * s, self.g[2] * s] }
    }
}

fn factorial_ratio(l: usize, m: usize) -> f64 {
    // (l - m)! / (l + m)!
    let mut r = 1.0;
    for i in (l - m + 1)..=(l + m) {
        r /= i as f64;
    }
    r
}

/// Evaluates the basis at unit direction `d`, writing `basis_len(l)` values
/// and (optionally) their gradients with respect to `d`.
pub fn eval_cartesian(d: Vec3, l: usize, values: &mut [f64], mut grads: Option<&mut [Vec3]>) {
    debug_assert!(values.len() >= basis_len(l));
    let x = Dual3::var(d[0], 0);
    let y = Dual3::var(d[1], 1);
    let z = Dual3::var(d[2], 2);

    // (x + iy)^m
    let mut cos_m = Dual3::constant(1.0);
    let mut sin_m = Dual3::constant(0.0);
    // (2m - 1)!!
    let mut dfact = 1.0;
    for m in 0..=l {
        if m > 0 {
            let c = x * cos_m - y * sin_m;
            let s = x * sin_m + y * cos_m;
            cos_m = c;
            sin_m = s;
            dfact *= (2 * m - 1) as f64;
        }
        // Legendre factor Q_l^m(z) for l = m, m+1, ...
        let mut q_prev = Dual3::constant(0.0);
        let mut q = Dual3::constant(dfact);
        for deg in m..=l {
            if deg > m {
                let next = if deg == m + 1 {
                    z * q * (2 * m + 1) as f64
                } else {
                    (z * q * (2 * deg - 1) as f64 - q_prev * (deg + m - 1) as f64) * (1.0 / (deg - m) as f64)
                };
                q_prev = q;
                q = next;
            }
            if deg == 0 {
                continue;
            }
            let k = math::sqrt((2 * deg + 1) as f64 / (4.0 * PI) * factorial_ratio(deg, m));
            let base = deg * deg - 1 + deg;
            let mut emit = |idx: usize, val: Dual3| {
                values[idx] = val.v;
                if let Some(g) = grads.as_deref_mut() {
                    g[idx] = val.g;
                }
            };
            if m == 0 {
                emit(base, q * k);
            } else {
                let kk = k * core::f64::consts::SQRT_2;
                emit(base + m, q * cos_m * kk);
                emit(base - m, q * sin_m * kk);
            }
        }
    }
}

/// Spherical-harmonic basis of degrees `1..=l` at polar angle `theta`
/// (from `+z`) and azimuth `phi`.
pub fn eval_sh_basis(theta: f64, phi: f64, l: usize) -> Result<Vec<f64>> {
    if l < 1 {
        return Err(Error::BadDegree(l));
    }
    let st = libm::sin(theta);
    let d = [st * libm::cos(phi), st * libm::sin(phi), libm::cos(theta)];
    let mut out = vec![0.0; basis_len(l)];
    eval_cartesian(d, l, &mut out, None);
    Ok(out)
}
