//! Triadic cube bookkeeping at unit-cell resolution.
//!
//! Cubes use a lower-corner convention: `□_n` based at `z` is the set of unit
//! cells `z + [0, 3^n)^d`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matalg::{Mat, SymMatrix};

/// Integer coordinates of a unit cell.
pub type CellIndex = Vec<i64>;

pub fn pow3(n: u32) -> i64 {
    3i64.pow(n)
}

/// Triadic cube of side `3^level` with lower corner `base`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TriadicCube {
    pub level: u32,
    pub base: Vec<i64>,
}

impl TriadicCube {
    pub fn new(level: u32, base: Vec<i64>) -> Self {
        TriadicCube { level, base }
    }

    pub fn origin(d: usize, level: u32) -> Self {
        TriadicCube { level, base: vec![0; d] }
    }

    pub fn d(&self) -> usize {
        self.base.len()
    }

    pub fn side(&self) -> i64 {
        pow3(self.level)
    }

    pub fn volume(&self) -> usize {
        (self.side() as usize).pow(self.d() as u32)
    }

    /// Cells in lexicographic order (first coordinate slowest).
    pub fn cells(&self) -> Vec<CellIndex> {
        lattice_points(&self.base, self.side(), 1)
    }

    pub fn contains_cell(&self, c: &[i64]) -> bool {
        c.iter().zip(&self.base).all(|(x, b)| *x >= *b && *x < b + self.side())
    }

    pub fn contains_cube(&self, other: &TriadicCube) -> bool {
        other
            .base
            .iter()
            .zip(&self.base)
            .all(|(o, b)| *o >= *b && o + other.side() <= b + self.side())
    }

    pub fn translate(&self, shift: &[i64]) -> Self {
        TriadicCube { level: self.level, base: self.base.iter().zip(shift).map(|(b, s)| b + s).collect() }
    }
}

/// Points `base + step·i` for `i ∈ [0, side/step)^d`, lexicographic.
fn lattice_points(base: &[i64], side: i64, step: i64) -> Vec<CellIndex> {
    let d = base.len();
    let m = (side / step) as usize;
    let total = m.pow(d as u32);
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; d];
    for _ in 0..total {
        out.push(idx.iter().zip(base).map(|(i, b)| b + step * *i as i64).collect());
        for a in (0..d).rev() {
            idx[a] += 1;
            if idx[a] < m {
                break;
            }
            idx[a] = 0;
        }
    }
    out
}

/// Splits a cube into its `3^{d(level−k)}` subcubes of level `k`.
pub fn partition(cube: &TriadicCube, k: u32) -> Result<Vec<TriadicCube>> {
    if k > cube.level {
        return Err(Error::BadPartition { level: cube.level, k });
    }
    Ok(lattice_points(&cube.base, cube.side(), pow3(k))
        .into_iter()
        .map(|b| TriadicCube::new(k, b))
        .collect())
}

/// Image of a triadic cube under `q₀`.
#[derive(Clone, Debug)]
pub struct AdaptedCube {
    pub level: u32,
    pub base: Vec<f64>,
    pub q0: SymMatrix,
}

impl AdaptedCube {
    /// Adapted cube whose base is `3^level · q₀ z` for a lattice point `z`.
    pub fn at_lattice(level: u32, z: &[i64], q0: SymMatrix) -> Self {
        let s = pow3(level) as f64;
        let zv = nalgebra::DVector::from_iterator(z.len(), z.iter().map(|&v| v as f64 * s));
        let b = q0.mat() * zv;
        AdaptedCube { level, base: b.iter().cloned().collect(), q0 }
    }

    pub fn d(&self) -> usize {
        self.base.len()
    }
}

/// Cells whose centres `x` satisfy `q₀⁻¹(x − base) ∈ [0, 3^level)^d`.
pub fn adapted_cells(ac: &AdaptedCube) -> Vec<CellIndex> {
    let d = ac.d();
    let side = pow3(ac.level) as f64;
    let q = ac.q0.mat();
    let qi = q.clone().try_inverse().expect("q0 invertible");
    let mut lo = ac.base.clone();
    let mut hi = ac.base.clone();
    for corner in 0..(1usize << d) {
        let v = nalgebra::DVector::from_fn(d, |i, _| if corner >> i & 1 == 1 { side } else { 0.0 });
        let x = q * v;
        for i in 0..d {
            lo[i] = lo[i].min(ac.base[i] + x[i]);
            hi[i] = hi[i].max(ac.base[i] + x[i]);
        }
    }
    let lo_i: Vec<i64> = lo.iter().map(|v| v.floor() as i64 - 1).collect();
    let ext: i64 = lo.iter().zip(&hi).map(|(l, h)| (h - l).ceil() as i64 + 3).max().unwrap_or(1);
    let mut out = Vec::new();
    for c in lattice_points(&lo_i, ext, 1) {
        let x = nalgebra::DVector::from_fn(d, |i, _| c[i] as f64 + 0.5 - ac.base[i]);
        let y: nalgebra::DVector<f64> = &qi * x;
        if y.iter().all(|v| *v >= 0.0 && *v < side) {
            out.push(c);
        }
    }
    out
}

/// Greedy decomposition of the adapted cube's cell set into disjoint aligned
/// Euclidean triadic cubes, largest first.
pub fn whitney_partition(ac: &AdaptedCube) -> Vec<TriadicCube> {
    let cells = adapted_cells(ac);
    cells_to_cubes(&cells, ac.level)
}

/// Covers a cell set by disjoint aligned triadic cubes of level ≤ `top`.
pub fn cells_to_cubes(cells: &[CellIndex], top: u32) -> Vec<TriadicCube> {
    if cells.is_empty() {
        return vec![];
    }
    let d = cells[0].len();
    let set: HashSet<&[i64]> = cells.iter().map(|c| c.as_slice()).collect();
    let step = pow3(top);
    let mut roots: Vec<CellIndex> = cells.iter().map(|c| c.iter().map(|v| v.div_euclid(step) * step).collect()).collect();
    roots.sort();
    roots.dedup();
    let mut out = Vec::new();
    for r in roots {
        visit(&TriadicCube::new(top, r), &set, d, &mut out);
    }
    out
}

fn visit(cube: &TriadicCube, set: &HashSet<&[i64]>, d: usize, out: &mut Vec<TriadicCube>) {
    let cells = cube.cells();
    let inside = cells.iter().filter(|c| set.contains(c.as_slice())).count();
    if inside == 0 {
        return;
    }
    if inside == cells.len() {
        out.push(cube.clone());
        return;
    }
    debug_assert!(cube.level > 0 || d == 0);
    for child in partition(cube, cube.level - 1).unwrap() {
        visit(&child, set, d, out);
    }
}

/// Diagonal `q₀` helper used in tests and examples.
pub fn diag_q0(v: &[f64]) -> SymMatrix {
    SymMatrix::new(Mat::from_diagonal(&nalgebra::DVector::from_column_slice(v)))
}
