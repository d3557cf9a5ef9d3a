//! Vertex extraction by marching cubes.
//!
//! Only vertices are needed, so the triangle table is never consulted:
//! every edge flagged by the edge table of a cube carries exactly one
//! isosurface vertex, shared with the neighbouring cubes. Vertices are
//! deduplicated on their grid edge and returned in canonical edge order.

use alloc::vec::Vec;

use crate::math::Vec3;
use crate::volume::AttenuationVolume;

/// Corner offsets in the usual (Lorensen/Bourke) numbering.
pub(crate) const CORNERS: [[usize; 3]; 8] =
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]];

pub(crate) const EDGES: [[usize; 2]; 12] =
    [[0, 1], [1, 2], [2, 3], [3, 0], [4, 5], [5, 6], [6, 7], [7, 4], [0, 4], [1, 5], [2, 6], [3, 7]];

const fn build_edge_table() -> [u16; 256] {
    let mut table = [0u16; 256];
    let mut case = 0;
    while case < 256 {
        let mut mask = 0u16;
        let mut e = 0;
        while e < 12 {
            let a = (case >> EDGES[e][0]) & 1;
            let b = (case >> EDGES[e][1]) & 1;
            if a != b {
                mask |= 1 << e;
            }
            e += 1;
        }
        table[case] = mask;
        case += 1;
    }
    table
}

/// 12-bit mask of intersected edges for each of the 256 corner
/// configurations (bit `c` of the case index set when corner `c` is below
/// the threshold).
pub const EDGE_TABLE: [u16; 256] = build_edge_table();

/// Isosurface vertices at `threshold`, in world millimetres.
pub fn marching_cubes(v: &AttenuationVolume, threshold: f64) -> Vec<Vec3> {
    let grid = v.grid();
    let [nx, ny, nz] = grid.dims;
    let density = v.density();
    if nx < 2 || ny < 2 || nz < 2 {
        return Vec::new();
    }
    // (edge key, position); key = axis + 3 * index of the lower endpoint
    let mut found: Vec<(usize, Vec3)> = Vec::new();
    let mut corner_vals = [0.0f64; 8];
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut case = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    let val = density[grid.index(i + off[0], j + off[1], k + off[2])];
                    corner_vals[c] = val;
                    if val < threshold {
                        case |= 1 << c;
                    }
                }
                let mask = EDGE_TABLE[case];
                if mask == 0 {
                    continue;
                }
                for (e, [a, b]) in EDGES.iter().copied().enumerate() {
                    if mask & (1 << e) == 0 {
                        continue;
                    }
                    let (pa, pb) = (CORNERS[a], CORNERS[b]);
                    let (lo, hi) = if pa <= pb { (a, b) } else { (b, a) };
                    let plo = CORNERS[lo];
                    let axis = (0..3).find(|&x| CORNERS[hi][x] != plo[x]).expect("edge spans one axis");
                    let key = axis + 3 * grid.index(i + plo[0], j + plo[1], k + plo[2]);
                    let (v0, v1) = (corner_vals[lo], corner_vals[hi]);
                    let t = (threshold - v0) / (v1 - v0);
                    let mut p = grid.voxel_center(i + plo[0], j + plo[1], k + plo[2]);
                    p[axis] += t * grid.spacing[axis];
                    found.push((key, p));
                }
            }
        }
    }
    found.sort_unstable_by_key(|&(key, _)| key);
    found.dedup_by_key(|&mut (key, _)| key);
    found.into_iter().map(|(_, p)| p).collect()
}
