//! Near-uniform SO(3) grids from the vertices and cells of the 600-cell.

use crate::error::{Error, Result};
use crate::geometry::Rotation;

const PHI: f64 = 1.618_033_988_749_895;

/// All 120 unit-quaternion vertices.
pub fn vertices() -> Vec<[f64; 4]> {
    let mut out = Vec::with_capacity(120);
    for k in 0..4 {
        for s in [1.0, -1.0] {
            let mut v = [0.0; 4];
            v[k] = s;
            out.push(v);
        }
    }
    for bits in 0..16u32 {
        out.push([0, 1, 2, 3].map(|k| if bits >> k & 1 == 1 { -0.5 } else { 0.5 }));
    }
    let base = [0.5 * PHI, 0.5, 0.5 / PHI, 0.0];
    for perm in even_permutations() {
        for bits in 0..8u32 {
            let mut v = [0.0; 4];
            for (slot, &src) in perm.iter().enumerate() {
                let mut x = base[src];
                if src < 3 && bits >> src & 1 == 1 {
                    x = -x;
                }
                v[slot] = x;
            }
            out.push(v);
        }
    }
    out
}

fn even_permutations() -> Vec<[usize; 4]> {
    let mut out = Vec::new();
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    let p = [a, b, c, d];
                    let distinct = (0..4).all(|i| (i + 1..4).all(|j| p[i] != p[j]));
                    if distinct && inversions(&p) % 2 == 0 {
                        out.push(p);
                    }
                }
            }
        }
    }
    out
}

fn inversions(p: &[usize; 4]) -> usize {
    (0..4)
        .map(|i| (i + 1..4).filter(|&j| p[i] > p[j]).count())
        .sum()
}

/// First nonzero coordinate positive; picks one of each antipodal pair.
fn canonical(q: &[f64; 4]) -> bool {
    q.iter().find(|x| x.abs() > 1e-12).is_some_and(|&x| x > 0.0)
}

fn dot4(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Normalised centroids of the 600 tetrahedral cells.
pub fn cell_centroids() -> Vec<[f64; 4]> {
    let v = vertices();
    let edge = 0.5 * PHI;
    let adjacent = |i: usize, j: usize| (dot4(&v[i], &v[j]) - edge).abs() < 1e-9;
    let nbrs: Vec<Vec<usize>> = (0..v.len())
        .map(|i| (0..v.len()).filter(|&j| j != i && adjacent(i, j)).collect())
        .collect();
    let mut out = Vec::with_capacity(600);
    for i in 0..v.len() {
        for &j in nbrs[i].iter().filter(|&&j| j > i) {
            for &k in nbrs[j].iter().filter(|&&k| k > j && adjacent(i, k)) {
                for &l in nbrs[k]
                    .iter()
                    .filter(|&&l| l > k && adjacent(i, l) && adjacent(j, l))
                {
                    let mut c = [0.0; 4];
                    for idx in [i, j, k, l] {
                        for d in 0..4 {
                            c[d] += v[idx][d];
                        }
                    }
                    let n = dot4(&c, &c).sqrt();
                    out.push(c.map(|x| x / n));
                }
            }
        }
    }
    out
}

/// `level` 60: vertex half-set. `level` 360: those plus the 300 cell
/// centroids left after antipodal identification.
pub fn sample_rotations_600cell(level: usize) -> Result<Vec<Rotation>> {
    let half = |qs: Vec<[f64; 4]>| -> Vec<Rotation> {
        qs.into_iter()
            .filter(canonical)
            .map(Rotation::from_quaternion)
            .collect()
    };
    match level {
        60 => Ok(half(vertices())),
        360 => {
            let mut r = half(vertices());
            r.extend(half(cell_centroids()));
            Ok(r)
        }
        other => Err(Error::Invalid(format!(
            "600-cell grid has 60 or 360 rotations, not {other}"
        ))),
    }
}
