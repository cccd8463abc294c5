//! Multilinear (Q1) elements on the unit-cell grid of a cube, with exact
//! tensor Gauss quadrature for cellwise constant coefficients.

use super::linalg::{StencilMatrix, ABSENT};
use crate::grids::TriadicCube;

/// Reference unit cell with `2^d` nodes and `2^d` Gauss points.
pub(crate) struct RefElement {
    pub d: usize,
    pub nn: usize,
    /// Gauss weight (all equal).
    pub w: f64,
    /// Shape values `[g][t]`.
    pub shape: Vec<f64>,
    /// Shape gradients `[g][t][a]`.
    pub grads: Vec<f64>,
    /// `∫ ∂_a N_t ∂_b N_u`, indexed `[a][b][t][u]`.
    pub stiff: Vec<f64>,
    /// `∫ ∂_a N_t`, indexed `[a][t]`.
    pub vol: Vec<f64>,
}

pub(crate) fn corner_bit(t: usize, a: usize, d: usize) -> usize {
    (t >> (d - 1 - a)) & 1
}

impl RefElement {
    pub fn new(d: usize) -> Self {
        let nn = 1usize << d;
        let h = 0.5 / 3f64.sqrt();
        let pts = [0.5 - h, 0.5 + h];
        let mut shape = vec![0.0; nn * nn];
        let mut grads = vec![0.0; nn * nn * d];
        for g in 0..nn {
            let x: Vec<f64> = (0..d).map(|a| pts[corner_bit(g, a, d)]).collect();
            for t in 0..nn {
                let f: Vec<f64> = (0..d).map(|a| if corner_bit(t, a, d) == 1 { x[a] } else { 1.0 - x[a] }).collect();
                shape[g * nn + t] = f.iter().product();
                for a in 0..d {
                    let mut v = if corner_bit(t, a, d) == 1 { 1.0 } else { -1.0 };
                    for b in 0..d {
                        if b != a {
                            v *= f[b];
                        }
                    }
                    grads[(g * nn + t) * d + a] = v;
                }
            }
        }
        let w = 1.0 / nn as f64;
        let mut stiff = vec![0.0; d * d * nn * nn];
        let mut vol = vec![0.0; d * nn];
        for g in 0..nn {
            for a in 0..d {
                for t in 0..nn {
                    let ga = grads[(g * nn + t) * d + a];
                    vol[a * nn + t] += w * ga;
                    for b in 0..d {
                        for u in 0..nn {
                            stiff[((a * d + b) * nn + t) * nn + u] += w * ga * grads[(g * nn + u) * d + b];
                        }
                    }
                }
            }
        }
        RefElement { d, nn, w, shape, grads, stiff, vol }
    }

    #[inline]
    pub fn grad(&self, g: usize, t: usize, a: usize) -> f64 {
        self.grads[(g * self.nn + t) * self.d + a]
    }
}

/// Node and cell bookkeeping for a cube of side `n` cells.
#[derive(Clone, Debug)]
pub(crate) struct CubeGrid {
    pub d: usize,
    pub n: usize,
    pub base: Vec<i64>,
}

impl CubeGrid {
    pub fn new(cube: &TriadicCube) -> Self {
        CubeGrid { d: cube.d(), n: cube.side() as usize, base: cube.base.clone() }
    }

    pub fn ncells(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn nnodes(&self) -> usize {
        (self.n + 1).pow(self.d as u32)
    }

    pub fn cell_coords(&self, mut c: usize) -> Vec<usize> {
        let mut x = vec![0; self.d];
        for a in (0..self.d).rev() {
            x[a] = c % self.n;
            c /= self.n;
        }
        x
    }

    pub fn node_coords(&self, mut v: usize) -> Vec<usize> {
        let m = self.n + 1;
        let mut x = vec![0; self.d];
        for a in (0..self.d).rev() {
            x[a] = v % m;
            v /= m;
        }
        x
    }

    pub fn node_index(&self, x: &[usize]) -> usize {
        x.iter().fold(0, |acc, v| acc * (self.n + 1) + v)
    }

    /// Absolute cell index of a local cell.
    pub fn abs_cell(&self, c: usize) -> Vec<i64> {
        self.cell_coords(c).iter().zip(&self.base).map(|(x, b)| *x as i64 + b).collect()
    }

    /// Absolute position of a node.
    pub fn node_pos(&self, v: usize) -> Vec<f64> {
        self.node_coords(v).iter().zip(&self.base).map(|(x, b)| (*x as i64 + b) as f64).collect()
    }

    /// Node indices of a cell in reference order.
    pub fn cell_nodes(&self, c: usize) -> Vec<usize> {
        let x = self.cell_coords(c);
        let nn = 1usize << self.d;
        (0..nn)
            .map(|t| {
                let y: Vec<usize> = (0..self.d).map(|a| x[a] + corner_bit(t, a, self.d)).collect();
                self.node_index(&y)
            })
            .collect()
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.node_coords(v).iter().any(|x| *x == 0 || *x == self.n)
    }
}

/// Mapping from nodes to unknowns.
#[derive(Clone, Debug)]
pub(crate) struct DofMap {
    pub nf: usize,
    pub node_dof: Vec<usize>,
    pub nnodes_free: usize,
}

impl DofMap {
    /// Unknowns on interior nodes.
    pub fn zero_trace(grid: &CubeGrid, nf: usize) -> Self {
        Self::build(grid, nf, |v| grid.is_boundary(v))
    }

    /// Unknowns on all nodes except node 0.
    pub fn pinned(grid: &CubeGrid, nf: usize) -> Self {
        Self::build(grid, nf, |v| v == 0)
    }

    fn build(grid: &CubeGrid, nf: usize, fixed: impl Fn(usize) -> bool) -> Self {
        let mut node_dof = vec![ABSENT; grid.nnodes()];
        let mut k = 0;
        for (v, slot) in node_dof.iter_mut().enumerate() {
            if !fixed(v) {
                *slot = k;
                k += 1;
            }
        }
        DofMap { nf, node_dof, nnodes_free: k }
    }

    pub fn n(&self) -> usize {
        self.nnodes_free * self.nf
    }
}

/// Assembles `Σ_e K_e` into stencil form; `elem(c, Ke)` fills the
/// `(nn·nf)²` element matrix of cell `c`, row index `t·nf + f`.
pub(crate) fn assemble(
    grid: &CubeGrid,
    dofs: &DofMap,
    mut elem: impl FnMut(usize, &mut [f64]),
) -> StencilMatrix {
    let d = grid.d;
    let nf = dofs.nf;
    let nn = 1usize << d;
    let nbr = 3usize.pow(d as u32);
    let width = nbr * nf;
    let mut m = StencilMatrix::new(dofs.n(), width);
    let mut ke = vec![0.0; nn * nf * nn * nf];
    let ne = nn * nf;
    for c in 0..grid.ncells() {
        let nodes = grid.cell_nodes(c);
        ke.iter_mut().for_each(|v| *v = 0.0);
        elem(c, &mut ke);
        for t in 0..nn {
            let kt = dofs.node_dof[nodes[t]];
            if kt == ABSENT {
                continue;
            }
            for u in 0..nn {
                let ku = dofs.node_dof[nodes[u]];
                if ku == ABSENT {
                    continue;
                }
                // neighbour slot from the corner difference
                let mut o = 0;
                for a in 0..d {
                    let delta = corner_bit(u, a, d) as i64 - corner_bit(t, a, d) as i64;
                    o = o * 3 + (delta + 1) as usize;
                }
                for f in 0..nf {
                    let row = kt * nf + f;
                    for g in 0..nf {
                        let slot = row * width + o * nf + g;
                        m.cols[slot] = ku * nf + g;
                        m.vals[slot] += ke[(t * nf + f) * ne + u * nf + g];
                    }
                }
            }
        }
    }
    m
}

/// Element matrix for the energy `∫ G·C G` with `G = (∇u_1, …, ∇u_nf)`
/// and constant `C` of size `nf·d`.
pub(crate) fn element_matrix(re: &RefElement, nf: usize, c: &[f64], ke: &mut [f64]) {
    let (d, nn) = (re.d, re.nn);
    let m = nf * d;
    let ne = nn * nf;
    for f in 0..nf {
        for a in 0..d {
            for g in 0..nf {
                for b in 0..d {
                    let cv = c[(f * d + a) * m + g * d + b];
                    if cv == 0.0 {
                        continue;
                    }
                    let base = (a * d + b) * nn;
                    for t in 0..nn {
                        for u in 0..nn {
                            ke[(t * nf + f) * ne + u * nf + g] += cv * re.stiff[(base + t) * nn + u];
                        }
                    }
                }
            }
        }
    }
}

/// Element load `∫ G(N)·L` for a constant vector `L` of size `nf·d`.
pub(crate) fn element_load(re: &RefElement, nf: usize, l: &[f64], fe: &mut [f64]) {
    let (d, nn) = (re.d, re.nn);
    for t in 0..nn {
        for f in 0..nf {
            let mut acc = 0.0;
            for a in 0..d {
                acc += l[f * d + a] * re.vol[a * nn + t];
            }
            fe[t * nf + f] = acc;
        }
    }
}
