//! Uniform-grid nearest-neighbour search for the initial Gaussian scales.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{self, Vec3};

/// Mean Euclidean distance from each point to its `k` nearest other
/// points. Points with fewer than `k` neighbours average over what exists;
/// a lone point gets 0.
pub fn mean_knn_distance(points: &[Vec3], k: usize) -> Vec<f64> {
    let n = points.len();
    if n == 0 || k == 0 {
        return vec![0.0; n];
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent: Vec3 = core::array::from_fn(|a| (hi[a] - lo[a]).max(1e-9));
    let vol = extent[0] * extent[1] * extent[2];
    // about two points per cell on average
    let mut cell = libm::cbrt(2.0 * vol / n as f64);
    if !(cell > 0.0) || !cell.is_finite() {
        cell = extent.iter().cloned().fold(0.0, f64::max);
    }
    let dims: [usize; 3] = core::array::from_fn(|a| ((extent[a] / cell) as usize + 1).min(1 << 10));
    let cell_of =
        |p: &Vec3| -> [usize; 3] { core::array::from_fn(|a| (((p[a] - lo[a]) / cell) as usize).min(dims[a] - 1)) };
    let flat = |c: [usize; 3]| c[0] + dims[0] * (c[1] + dims[1] * c[2]);
    let ncells = dims[0] * dims[1] * dims[2];

    // counting sort of point indices by cell
    let mut start = vec![0usize; ncells + 1];
    let cells: Vec<usize> = points.iter().map(|p| flat(cell_of(p))).collect();
    for &c in &cells {
        start[c + 1] += 1;
    }
    for c in 0..ncells {
        start[c + 1] += start[c];
    }
    let mut fill = start.clone();
    let mut order = vec![0usize; n];
    for (i, &c) in cells.iter().enumerate() {
        order[fill[c]] = i;
        fill[c] += 1;
    }

    let max_ring = dims.iter().copied().max().unwrap_or(1);
    let mut best = Vec::with_capacity(k + 1);
    points
        .iter()
        .enumerate()
        .map(|(qi, q)| {
            best.clear();
            let qc = cell_of(q);
            for ring in 0..=max_ring {
                let r = ring as isize;
                for dz in -r..=r {
                    for dy in -r..=r {
                        for dx in -r..=r {
                            if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                                continue;
                            }
                            let c = [qc[0] as isize + dx, qc[1] as isize + dy, qc[2] as isize + dz];
                            if (0..3).any(|a| c[a] < 0 || c[a] >= dims[a] as isize) {
                                continue;
                            }
                            let fc = flat([c[0] as usize, c[1] as usize, c[2] as usize]);
                            for &j in &order[start[fc]..start[fc + 1]] {
                                if j == qi {
                                    continue;
                                }
                                let d = math::norm(math::sub(points[j], *q));
                                let pos = best.partition_point(|&b: &f64| b <= d);
                                if pos < k {
                                    best.insert(pos, d);
                                    best.truncate(k);
                                }
                            }
                        }
                    }
                }
                if best.len() == k && best[k - 1] <= ring as f64 * cell {
                    break;
                }
            }
            if best.is_empty() {
                0.0
            } else {
                best.iter().sum::<f64>() / best.len() as f64
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &[Vec3], k: usize) -> Vec<f64> {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut d: Vec<f64> = points
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, q)| math::norm(math::sub(*p, *q)))
                    .collect();
                d.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let m = d.len().min(k);
                if m == 0 {
                    0.0
                } else {
                    d[..m].iter().sum::<f64>() / m as f64
                }
            })
            .collect()
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1usize, 2, 4, 50, 700] {
            let pts: Vec<Vec3> = (0..n)
                .map(|_| [rng.gen_range(-30.0..30.0), rng.gen_range(-5.0..5.0), rng.gen_range(0.0..80.0)])
                .collect();
            let fast = mean_knn_distance(&pts, 3);
            let slow = brute(&pts, 3);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "n = {n}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn duplicates_give_zero() {
        let pts = vec![[1.0, 2.0, 3.0]; 5];
        assert!(mean_knn_distance(&pts, 3).iter().all(|&d| d == 0.0));
    }
}
