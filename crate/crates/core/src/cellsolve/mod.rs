//! Discrete variational cell problems on triadic cubes.
//!
//! Functions are multilinear (Q1) on the nodes of the unit-cell grid, and
//! `J(U,p,q)` is the supremum over discrete `a`-harmonic functions in `U`.
//! For symmetric fields this splits into a Dirichlet problem (giving `s`) and
//! a Neumann problem (giving `s*⁻¹`); otherwise the constrained maximization
//! is solved as a saddle-point system with a multiplier on interior nodes.
//! With cellwise constant coefficients all integrals are evaluated exactly by
//! tensor Gauss quadrature, and restricting a discrete solution to a triadic
//! subcube gives a discrete solution there, so subadditivity is exact.

mod fem;
mod linalg;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::{Mutex, OnceLock};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::CoefficientField;
use crate::grids::{partition, TriadicCube};
use crate::matalg::{self, dot, star_dual, BlockMatrix, Mat};

use fem::{assemble, element_load, element_matrix, CubeGrid, DofMap, RefElement};
use linalg::{LinearSolver, StencilMatrix, ABSENT};

/// Linear solver settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    /// Relative residual required of every solve.
    pub tol: f64,
    /// Largest band storage (in f64 entries) for the direct factorization;
    /// larger systems fall back to diagonally preconditioned CG.
    pub max_band_entries: usize,
}

static DEFAULT_TOL: AtomicU64 = AtomicU64::new(0x3DDB_7CDF_D9D7_BDBB); // 1e-10

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: f64::from_bits(DEFAULT_TOL.load(AtomicOrdering::Relaxed)), max_band_entries: 40_000_000 }
    }
}

/// Sets the relative residual used by every solve that takes default options,
/// and drops memoized coarse matrices computed under the previous value.
pub fn set_default_tolerance(tol: f64) -> Result<()> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::BadSpec(format!("solver tolerance must lie in (0, 1), got {tol}")));
    }
    if DEFAULT_TOL.swap(tol.to_bits(), AtomicOrdering::Relaxed) != tol.to_bits() {
        clear_cache();
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
    pub wall_time: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Boundary {
    ZeroTrace,
    Free,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Layout {
    /// Values at the `(side+1)^d` nodes, lexicographic.
    Nodal(Boundary),
    /// `components` values per cell, cells lexicographic.
    CellVector { components: usize },
}

/// Function on the grid of a cube.
#[derive(Clone, Debug)]
pub struct DiscreteFunction {
    pub cube: TriadicCube,
    pub layout: Layout,
    pub values: Vec<f64>,
}

impl DiscreteFunction {
    /// Nodal value at local node coordinates.
    pub fn node(&self, x: &[usize]) -> f64 {
        let m = self.cube.side() as usize + 1;
        self.values[x.iter().fold(0, |acc, v| acc * m + v)]
    }

    /// Cell value block at local cell coordinates.
    pub fn cell(&self, x: &[usize]) -> &[f64] {
        let Layout::CellVector { components } = self.layout else { panic!("not a cell field") };
        let n = self.cube.side() as usize;
        let c = x.iter().fold(0, |acc, v| acc * n + v);
        &self.values[c * components..(c + 1) * components]
    }
}

// ---------------------------------------------------------------------------
// per-cell coefficient data

struct CellData {
    d: usize,
    grid: CubeGrid,
    /// a(x) per cell, row-major.
    a: Vec<f64>,
    /// Block matrix of a(x) per cell, row-major 2d×2d.
    blk: Vec<f64>,
    symmetric: bool,
}

fn pointwise_block(a: &Mat) -> Result<Mat> {
    let d = a.nrows();
    let s = (a + a.transpose()) * 0.5;
    let k = (a - a.transpose()) * 0.5;
    let si = matalg::inverse(&s)?;
    let kt = k.transpose();
    let mut m = Mat::zeros(2 * d, 2 * d);
    m.view_mut((0, 0), (d, d)).copy_from(&(&s + &kt * &si * &k));
    m.view_mut((0, d), (d, d)).copy_from(&(-(&kt * &si)));
    m.view_mut((d, 0), (d, d)).copy_from(&(-(&si * &k)));
    m.view_mut((d, d), (d, d)).copy_from(&si);
    Ok((&m + m.transpose()) * 0.5)
}

impl CellData {
    fn new(field: &CoefficientField, cube: &TriadicCube) -> Result<Self> {
        if cube.d() != field.d() || !field.region().contains_cube(cube) {
            return Err(Error::OutOfBox);
        }
        let d = field.d();
        let grid = CubeGrid::new(cube);
        let nc = grid.ncells();
        let mut a = Vec::with_capacity(nc * d * d);
        let mut blk = Vec::with_capacity(nc * 4 * d * d);
        let mut symmetric = true;
        for c in 0..nc {
            let i = field.region().index(&grid.abs_cell(c)).ok_or(Error::OutOfBox)?;
            let e = field.entries(i);
            for r in 0..d {
                for s in 0..r {
                    if e[r * d + s] != e[s * d + r] {
                        symmetric = false;
                    }
                }
            }
            a.extend_from_slice(e);
            let m = pointwise_block(&Mat::from_row_slice(d, d, e))?;
            blk.extend(m.transpose().iter());
        }
        Ok(CellData { d, grid, a, blk, symmetric })
    }

    fn a(&self, c: usize) -> &[f64] {
        let dd = self.d * self.d;
        &self.a[c * dd..(c + 1) * dd]
    }

    fn blk(&self, c: usize) -> &[f64] {
        let n = 4 * self.d * self.d;
        &self.blk[c * n..(c + 1) * n]
    }

    fn mean_block(&self) -> Mat {
        let n = 2 * self.d;
        let nc = self.grid.ncells();
        let mut m = Mat::zeros(n, n);
        for c in 0..nc {
            m += Mat::from_row_slice(n, n, self.blk(c));
        }
        m / nc as f64
    }

    fn mean_a(&self) -> Mat {
        let d = self.d;
        let mut m = Mat::zeros(d, d);
        for c in 0..self.grid.ncells() {
            m += Mat::from_row_slice(d, d, self.a(c));
        }
        m / self.volume()
    }

    fn volume(&self) -> f64 {
        self.grid.ncells() as f64
    }
}

// ---------------------------------------------------------------------------
// cell problem

/// Nodal functions `v_j`, `[j][node]`, such that the maximizer for `(p,q)`
/// is `Σ_j P_j v_j` with `P = (−p, q)`.
type Basis = Vec<Vec<f64>>;

/// Solved cell problem on one cube.
pub struct CellProblem {
    data: CellData,
    re: RefElement,
    basis: Basis,
    pub a: BlockMatrix,
    /// `⨍ 𝐀(x) dx`.
    pub mean_block: Mat,
    /// Largest entry of `A − Aᵗ` before symmetrization.
    pub asymmetry: f64,
    pub reports: Vec<SolveReport>,
}

/// Gradient of the element function `ue` at Gauss point `g`.
fn gauss_gradient(re: &RefElement, ue: &[f64], g: usize, out: &mut [f64]) {
    for a in 0..re.d {
        out[a] = (0..re.nn).map(|t| ue[t] * re.grad(g, t, a)).sum();
    }
}

/// Expands unknown vectors to nodal values (zero on fixed nodes).
fn nodal_values(node_dof: &[usize], sols: &[Vec<f64>]) -> Basis {
    sols.iter().map(|u| node_dof.iter().map(|&k| if k == ABSENT { 0.0 } else { u[k] }).collect()).collect()
}

fn unit(d: usize, j: usize) -> Vec<f64> {
    (0..d).map(|a| if a == j { 1.0 } else { 0.0 }).collect()
}

/// Assembles `Σ_c ∫ ∇N_t·L_c` for constant per-cell vectors into a dof vector.
fn assemble_load(data: &CellData, re: &RefElement, node_dof: &[usize], n: usize, l: impl Fn(usize) -> Vec<f64>) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let mut fe = vec![0.0; re.nn];
    for c in 0..data.grid.ncells() {
        let nodes = data.grid.cell_nodes(c);
        element_load(re, 1, &l(c), &mut fe);
        for (t, &v) in nodes.iter().enumerate() {
            let k = node_dof[v];
            if k != ABSENT {
                out[k] += fe[t];
            }
        }
    }
    out
}

/// Dirichlet correctors `min ⨍ (e_j+∇φ)·s(e_j+∇φ)` over zero-trace `φ`:
/// returns `s(U)` and the gradients `e_j + ∇φ_j`.
fn solve_dirichlet_correctors(data: &CellData, re: &RefElement, opts: &SolverOptions) -> Result<(Mat, Basis, Vec<SolveReport>)> {
    let d = data.d;
    let dofs = DofMap::zero_trace(&data.grid, 1);
    let k = assemble(&data.grid, &dofs, |c, ke| element_matrix(re, 1, data.a(c), ke));
    let n = dofs.n();
    let loads: Vec<Vec<f64>> = (0..d)
        .map(|j| assemble_load(data, re, &dofs.node_dof, n, |c| (0..d).map(|b| data.a(c)[b * d + j]).collect()))
        .collect();
    let solver = LinearSolver::new(&k, true, opts)?;
    let mut sols = Vec::with_capacity(d);
    let mut reports = Vec::new();
    for f in &loads {
        let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        let (u, rep) = solver.solve(&rhs)?;
        reports.push(rep);
        sols.push(u);
    }
    let mean = data.mean_a();
    let mut s = Mat::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            // the corrector equation removes the ∇φ_i terms
            s[(i, j)] = mean[(i, j)] + dot(&loads[i], &sols[j]) / data.volume();
        }
    }
    let mut nodal = nodal_values(&dofs.node_dof, &sols);
    for (j, f) in nodal.iter_mut().enumerate() {
        for (v, x) in f.iter_mut().enumerate() {
            *x += data.grid.node_coords(v)[j] as f64;
        }
    }
    Ok(((&s + s.transpose()) * 0.5, nodal, reports))
}

/// Neumann problems `max ⨍ 2e_j·∇w − ∇w·a∇w` over free nodal functions
/// (one node pinned), giving `s*⁻¹` for symmetric fields.
fn solve_neumann(data: &CellData, re: &RefElement, opts: &SolverOptions) -> Result<(Mat, Basis, Vec<SolveReport>)> {
    let d = data.d;
    let dofs = DofMap::pinned(&data.grid, 1);
    let k = assemble(&data.grid, &dofs, |c, ke| element_matrix(re, 1, data.a(c), ke));
    let n = dofs.n();
    let loads: Vec<Vec<f64>> = (0..d).map(|j| assemble_load(data, re, &dofs.node_dof, n, |_| unit(d, j))).collect();
    let solver = LinearSolver::new(&k, true, opts)?;
    let mut sols = Vec::new();
    let mut reports = Vec::new();
    for f in &loads {
        let (u, rep) = solver.solve(f)?;
        reports.push(rep);
        sols.push(u);
    }
    let vol = data.volume();
    let mut m = Mat::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            m[(i, j)] = 0.5 * (dot(&loads[i], &sols[j]) + dot(&loads[j], &sols[i])) / vol;
        }
    }
    Ok((m, nodal_values(&dofs.node_dof, &sols), reports))
}

/// Unknown layout of the saddle-point system: per node an optional potential
/// (all nodes but node 0) and an optional multiplier (interior nodes).
struct SaddleDofs {
    u: Vec<usize>,
    lam: Vec<usize>,
    n: usize,
}

impl SaddleDofs {
    fn new(grid: &CubeGrid) -> Self {
        let nn = grid.nnodes();
        let (mut u, mut lam) = (vec![ABSENT; nn], vec![ABSENT; nn]);
        let mut k = 0;
        for v in 0..nn {
            if v != 0 {
                u[v] = k;
                k += 1;
            }
            if !grid.is_boundary(v) {
                lam[v] = k;
                k += 1;
            }
        }
        SaddleDofs { u, lam, n: k }
    }
}

/// Maximizes `⨍ −½∇v·s∇v + F·∇v` over discrete `a`-harmonic `v` for the `2d`
/// loads `F_j = aᵗe_j` (j < d) and `F_{d+j} = e_j`; returns the Gram matrix
/// `M_ij = ⨍ F_i·∇v_j` and the gradients `∇v_j`.
fn solve_constrained(data: &CellData, re: &RefElement, opts: &SolverOptions) -> Result<(Mat, Basis, Vec<SolveReport>)> {
    let d = data.d;
    let n2 = 2 * d;
    let grid = &data.grid;
    let nn = re.nn;
    let dofs = SaddleDofs::new(grid);
    let width = 2 * 3usize.pow(d as u32);
    let mut m = StencilMatrix::new(dofs.n, width);
    let mut ka = vec![0.0; nn * nn];
    let mut ks = vec![0.0; nn * nn];
    let put = |m: &mut StencilMatrix, row: usize, slot: usize, col: usize, v: f64| {
        let i = row * width + slot;
        m.cols[i] = col;
        m.vals[i] += v;
    };
    for c in 0..grid.ncells() {
        let nodes = grid.cell_nodes(c);
        let a = data.a(c);
        let sym: Vec<f64> = (0..d * d).map(|i| 0.5 * (a[i] + a[(i % d) * d + i / d])).collect();
        ka.iter_mut().for_each(|v| *v = 0.0);
        ks.iter_mut().for_each(|v| *v = 0.0);
        element_matrix(re, 1, a, &mut ka);
        element_matrix(re, 1, &sym, &mut ks);
        for t in 0..nn {
            for u in 0..nn {
                let mut o = 0;
                for ax in 0..d {
                    let delta = fem::corner_bit(u, ax, d) as i64 - fem::corner_bit(t, ax, d) as i64;
                    o = o * 3 + (delta + 1) as usize;
                }
                let (vt, vu) = (nodes[t], nodes[u]);
                if dofs.u[vt] != ABSENT {
                    if dofs.u[vu] != ABSENT {
                        put(&mut m, dofs.u[vt], 2 * o, dofs.u[vu], ks[t * nn + u]);
                    }
                    if dofs.lam[vu] != ABSENT {
                        put(&mut m, dofs.u[vt], 2 * o + 1, dofs.lam[vu], -ka[u * nn + t]);
                    }
                }
                if dofs.lam[vt] != ABSENT && dofs.u[vu] != ABSENT {
                    put(&mut m, dofs.lam[vt], 2 * o, dofs.u[vu], -ka[t * nn + u]);
                }
            }
        }
    }
    let loads: Vec<Vec<f64>> = (0..n2)
        .map(|j| {
            assemble_load(data, re, &dofs.u, dofs.n, |c| {
                if j < d {
                    (0..d).map(|b| data.a(c)[j * d + b]).collect()
                } else {
                    unit(d, j - d)
                }
            })
        })
        .collect();
    let mut sols = Vec::with_capacity(n2);
    let mut reports = Vec::new();
    match LinearSolver::new_indefinite(&m, opts)? {
        Some(solver) => {
            for f in &loads {
                let (x, rep) = solver.solve(f)?;
                reports.push(rep);
                sols.push(x);
            }
        }
        None => {
            let (pu, pl) = preconditioner_blocks(data, re, &dofs)?;
            let su = LinearSolver::new(&pu.0, true, opts)?;
            let sl = LinearSolver::new(&pl.0, true, opts)?;
            let pinv = |r: &[f64]| -> Result<Vec<f64>> {
                let mut out = vec![0.0; r.len()];
                for (blk, solver) in [(&pu, &su), (&pl, &sl)] {
                    let rr: Vec<f64> = blk.1.iter().map(|&i| r[i]).collect();
                    let (x, _) = solver.solve(&rr)?;
                    for (k, &i) in blk.1.iter().enumerate() {
                        out[i] = x[k];
                    }
                }
                Ok(out)
            };
            for f in &loads {
                let start = std::time::Instant::now();
                let (x, iterations, residual) = linalg::minres(&|x, y| m.matvec(x, y), &pinv, f, opts.tol, 20 * dofs.n)?;
                reports.push(SolveReport { iterations, residual, wall_time: start.elapsed().as_secs_f64() });
                sols.push(x);
            }
        }
    }
    let vol = data.volume();
    let mut gram = Mat::zeros(n2, n2);
    for i in 0..n2 {
        for j in 0..n2 {
            gram[(i, j)] = dot(&loads[i], &sols[j]) / vol;
        }
    }
    Ok((gram, nodal_values(&dofs.u, &sols), reports))
}

/// SPD blocks `diag(S, S_II)` of the saddle system with their dof lists.
type Block = (StencilMatrix, Vec<usize>);

fn preconditioner_blocks(data: &CellData, re: &RefElement, dofs: &SaddleDofs) -> Result<(Block, Block)> {
    let d = data.d;
    let sym = |c: usize| -> Vec<f64> {
        let a = data.a(c);
        (0..d * d).map(|i| 0.5 * (a[i] + a[(i % d) * d + i / d])).collect()
    };
    let pinned = DofMap::pinned(&data.grid, 1);
    let interior = DofMap::zero_trace(&data.grid, 1);
    let su = assemble(&data.grid, &pinned, |c, ke| element_matrix(re, 1, &sym(c), ke));
    let sl = assemble(&data.grid, &interior, |c, ke| element_matrix(re, 1, &sym(c), ke));
    let order = |map: &DofMap, target: &[usize]| -> Vec<usize> {
        let mut idx = vec![0; map.n()];
        for (v, &k) in map.node_dof.iter().enumerate() {
            if k != ABSENT {
                idx[k] = target[v];
            }
        }
        idx
    };
    Ok(((su, order(&pinned, &dofs.u)), (sl, order(&interior, &dofs.lam))))
}

/// Solves the cell problems of `cube` and assembles `A(cube)`.
pub fn solve_cell_problem(field: &CoefficientField, cube: &TriadicCube, opts: &SolverOptions) -> Result<CellProblem> {
    let data = CellData::new(field, cube)?;
    let d = data.d;
    let re = RefElement::new(d);
    let mean_block = mean_block_checked(&data)?;
    let (a, basis, reports) = if data.symmetric {
        let (s, mut g, mut reports) = solve_dirichlet_correctors(&data, &re, opts)?;
        let (sinv, w, reps) = solve_neumann(&data, &re, opts)?;
        reports.extend(reps);
        g.extend(w);
        let mut a = Mat::zeros(2 * d, 2 * d);
        a.view_mut((0, 0), (d, d)).copy_from(&s);
        a.view_mut((d, d), (d, d)).copy_from(&sinv);
        (a, g, reports)
    } else {
        let (gram, g, reports) = solve_constrained(&data, &re, opts)?;
        // J = ½P·(A + Z)P with Z = [[0, I], [I, 0]]
        let mut a = gram;
        for i in 0..d {
            a[(i, d + i)] -= 1.0;
            a[(d + i, i)] -= 1.0;
        }
        (a, g, reports)
    };
    let asymmetry = (&a - a.transpose()).abs().max();
    Ok(CellProblem { data, re, basis, a: BlockMatrix::new(d, a), mean_block, asymmetry, reports })
}

fn mean_block_checked(data: &CellData) -> Result<Mat> {
    let m = data.mean_block();
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateField { cell: data.grid.abs_cell(0), value: f64::NAN });
    }
    Ok(m)
}

/// Averages of the maximizer `v(·,U,p,q)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MaximizerStats {
    pub mean_gradient: Vec<f64>,
    pub mean_flux: Vec<f64>,
    /// `⨍ ∇v·s∇v`, which equals `2J(U,p,q)`.
    pub energy: f64,
}

impl CellProblem {
    pub fn d(&self) -> usize {
        self.data.d
    }

    pub fn cube_side(&self) -> usize {
        self.data.grid.n
    }

    /// Nodal values of the maximizer `v(·,U,p,q)`.
    pub fn maximizer(&self, p: &[f64], q: &[f64]) -> Vec<f64> {
        let d = self.data.d;
        let mut v = vec![0.0; self.data.grid.nnodes()];
        for (j, b) in self.basis.iter().enumerate() {
            let c = if j < d { -p[j] } else { q[j - d] };
            if c != 0.0 {
                v.iter_mut().zip(b).for_each(|(x, y)| *x += c * y);
            }
        }
        v
    }

    /// Gradient and flux of the maximizer at every Gauss point, as
    /// `[cell][g][2d]` (gradient then flux).
    pub fn maximizer_field(&self, p: &[f64], q: &[f64]) -> Vec<f64> {
        let d = self.data.d;
        let n2 = 2 * d;
        let nn = self.re.nn;
        let grid = &self.data.grid;
        let v = self.maximizer(p, q);
        let mut out = vec![0.0; grid.ncells() * nn * n2];
        let mut ue = vec![0.0; nn];
        for c in 0..grid.ncells() {
            for (t, n) in grid.cell_nodes(c).into_iter().enumerate() {
                ue[t] = v[n];
            }
            let a = self.data.a(c);
            for g in 0..nn {
                let o = (c * nn + g) * n2;
                gauss_gradient(&self.re, &ue, g, &mut out[o..o + d]);
                for r in 0..d {
                    out[o + d + r] = (0..d).map(|s| a[r * d + s] * out[o + s]).sum();
                }
            }
        }
        out
    }

    pub fn maximizer_stats(&self, p: &[f64], q: &[f64]) -> MaximizerStats {
        let d = self.data.d;
        let n2 = 2 * d;
        let nn = self.re.nn;
        let f = self.maximizer_field(p, q);
        let mut mg = vec![0.0; d];
        let mut mf = vec![0.0; d];
        let mut e = 0.0;
        let w = self.re.w / self.data.volume();
        for c in 0..self.data.grid.ncells() {
            let a = self.data.a(c);
            for g in 0..nn {
                let o = (c * nn + g) * n2;
                for r in 0..d {
                    mg[r] += w * f[o + r];
                    mf[r] += w * f[o + d + r];
                    for s in 0..d {
                        e += w * f[o + r] * 0.5 * (a[r * d + s] + a[s * d + r]) * f[o + s];
                    }
                }
            }
        }
        MaximizerStats { mean_gradient: mg, mean_flux: mf, energy: e }
    }
}

// ---------------------------------------------------------------------------
// cache and public entry points

type CacheMap = HashMap<(u64, TriadicCube), BlockMatrix>;

fn cache() -> &'static Mutex<CacheMap> {
    static CACHE: OnceLock<Mutex<CacheMap>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

const CACHE_CAP: usize = 1 << 20;

/// Drops all memoized coarse matrices.
pub fn clear_cache() {
    cache().lock().unwrap().clear();
}

/// Drops the memoized coarse matrices of one field.
pub fn forget_field(field: &CoefficientField) {
    let id = field.id();
    cache().lock().unwrap().retain(|k, _| k.0 != id);
}

/// `A(cube)` for the field, memoized per `(field, cube)`.
pub fn coarse_matrix(field: &CoefficientField, cube: &TriadicCube) -> Result<BlockMatrix> {
    let key = (field.id(), cube.clone());
    if let Some(a) = cache().lock().unwrap().get(&key) {
        return Ok(a.clone());
    }
    let a = solve_cell_problem(field, cube, &SolverOptions::default())?.a;
    let mut c = cache().lock().unwrap();
    if c.len() >= CACHE_CAP {
        c.clear();
    }
    c.insert(key, a.clone());
    Ok(a)
}

/// `J(U,p,q) = ½(−p,q)·A(U)(−p,q) − p·q`.
pub fn j_value(field: &CoefficientField, cube: &TriadicCube, p: &[f64], q: &[f64]) -> Result<f64> {
    Ok(coarse_matrix(field, cube)?.j(p, q))
}

/// `J*(U,p,q) = ½(p,q)·A(U)(p,q) − p·q`.
pub fn j_star_value(field: &CoefficientField, cube: &TriadicCube, p: &[f64], q: &[f64]) -> Result<f64> {
    Ok(coarse_matrix(field, cube)?.j_star(p, q))
}

pub fn maximizer_stats(field: &CoefficientField, cube: &TriadicCube, p: &[f64], q: &[f64]) -> Result<MaximizerStats> {
    Ok(solve_cell_problem(field, cube, &SolverOptions::default())?.maximizer_stats(p, q))
}

/// Finite-volume corrector: the maximizer for `(p,q) = (0, s*(U)e)` as a
/// nodal function, normalized to vanish at the first node.
pub fn finite_volume_corrector(field: &CoefficientField, cube: &TriadicCube, e: &[f64]) -> Result<DiscreteFunction> {
    let cp = solve_cell_problem(field, cube, &SolverOptions::default())?;
    let d = cp.d();
    if e.len() != d {
        return Err(Error::BadSpec("direction has the wrong dimension".into()));
    }
    let comp = cp.a.components()?;
    let q: Vec<f64> = (0..d).map(|i| (0..d).map(|j| comp.s_star.mat()[(i, j)] * e[j]).sum()).collect();
    let mut values = cp.maximizer(&vec![0.0; d], &q);
    let v0 = values[0];
    values.iter_mut().for_each(|x| *x -= v0);
    Ok(DiscreteFunction { cube: cube.clone(), layout: Layout::Nodal(Boundary::Free), values })
}

/// Solves `−∇·a∇u = f` in the cube with `u = g` on boundary nodes; `f` is
/// given per cell (lexicographic) and `g` at absolute node positions.
pub fn solve_dirichlet(
    field: &CoefficientField,
    cube: &TriadicCube,
    g: &dyn Fn(&[f64]) -> f64,
    f: Option<&[f64]>,
) -> Result<(DiscreteFunction, SolveReport)> {
    solve_dirichlet_with(field, cube, g, f, &SolverOptions::default())
}

pub fn solve_dirichlet_with(
    field: &CoefficientField,
    cube: &TriadicCube,
    g: &dyn Fn(&[f64]) -> f64,
    f: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<(DiscreteFunction, SolveReport)> {
    let data = CellData::new(field, cube)?;
    let re = RefElement::new(data.d);
    let grid = &data.grid;
    if let Some(src) = f {
        if src.len() != grid.ncells() {
            return Err(Error::BadSpec("source length must equal the number of cells".into()));
        }
    }
    let dofs = DofMap::zero_trace(grid, 1);
    let nn = re.nn;
    let mut nodal: Vec<f64> = (0..grid.nnodes()).map(|v| if grid.is_boundary(v) { g(&grid.node_pos(v)) } else { 0.0 }).collect();
    let mut rhs = vec![0.0; dofs.n()];
    let mut ke = vec![0.0; nn * nn];
    let k: StencilMatrix = assemble(grid, &dofs, |c, ke| element_matrix(&re, 1, data.a(c), ke));
    for c in 0..grid.ncells() {
        let nodes = grid.cell_nodes(c);
        ke.iter_mut().for_each(|v| *v = 0.0);
        element_matrix(&re, 1, data.a(c), &mut ke);
        for t in 0..nn {
            let kt = dofs.node_dof[nodes[t]];
            if kt == ABSENT {
                continue;
            }
            if let Some(src) = f {
                rhs[kt] += src[c] / nn as f64;
            }
            for u in 0..nn {
                if dofs.node_dof[nodes[u]] == ABSENT {
                    rhs[kt] -= ke[t * nn + u] * nodal[nodes[u]];
                }
            }
        }
    }
    let solver = LinearSolver::new(&k, data.symmetric, opts)?;
    let (u, rep) = solver.solve(&rhs)?;
    for (v, slot) in nodal.iter_mut().enumerate() {
        let kd = dofs.node_dof[v];
        if kd != ABSENT {
            *slot = u[kd];
        }
    }
    Ok((DiscreteFunction { cube: cube.clone(), layout: Layout::Nodal(Boundary::ZeroTrace), values: nodal }, rep))
}

/// Cellwise averages of a nodal function: per cell `(⨍∇w, ⨍a∇w, ⨍∇w·s∇w)`,
/// `2d + 1` components.
pub fn cell_averages(field: &CoefficientField, w: &DiscreteFunction) -> Result<DiscreteFunction> {
    let data = CellData::new(field, &w.cube)?;
    let re = RefElement::new(data.d);
    let d = data.d;
    let grid = &data.grid;
    let nc = 2 * d + 1;
    let mut out = vec![0.0; grid.ncells() * nc];
    let mut ue = vec![0.0; re.nn];
    let mut gv = vec![0.0; d];
    for c in 0..grid.ncells() {
        for (t, v) in grid.cell_nodes(c).into_iter().enumerate() {
            ue[t] = w.values[v];
        }
        let a = data.a(c);
        let o = &mut out[c * nc..(c + 1) * nc];
        for g in 0..re.nn {
            gauss_gradient(&re, &ue, g, &mut gv);
            for r in 0..d {
                o[r] += re.w * gv[r];
                for s in 0..d {
                    o[d + r] += re.w * a[r * d + s] * gv[s];
                    o[2 * d] += re.w * gv[r] * 0.5 * (a[r * d + s] + a[s * d + r]) * gv[s];
                }
            }
        }
    }
    Ok(DiscreteFunction { cube: w.cube.clone(), layout: Layout::CellVector { components: nc }, values: out })
}

/// Spatial averages of a nodal function: `(⨍∇w, ⨍a∇w, ⨍∇w·s∇w)`.
pub fn gradient_averages(field: &CoefficientField, w: &DiscreteFunction) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let cells = cell_averages(field, w)?;
    let d = w.cube.d();
    let nc = 2 * d + 1;
    let n = cells.values.len() / nc;
    let mut m = vec![0.0; nc];
    for c in 0..n {
        for (r, slot) in m.iter_mut().enumerate() {
            *slot += cells.values[c * nc + r];
        }
    }
    m.iter_mut().for_each(|v| *v /= n as f64);
    Ok((m[..d].to_vec(), m[d..2 * d].to_vec(), m[2 * d]))
}

/// Cell means of a nodal function.
pub fn nodal_cell_means(u: &DiscreteFunction) -> Vec<f64> {
    let grid = CubeGrid::new(&u.cube);
    let nn = 1usize << grid.d;
    (0..grid.ncells()).map(|c| grid.cell_nodes(c).iter().map(|&v| u.values[v]).sum::<f64>() / nn as f64).collect()
}

/// Values of a nodal function at the `2^d` Gauss points of every cell, each
/// carrying weight `1/(2^d · #cells)`.
pub fn nodal_gauss_values(u: &DiscreteFunction) -> Vec<f64> {
    let grid = CubeGrid::new(&u.cube);
    let re = RefElement::new(grid.d);
    let mut out = Vec::with_capacity(grid.ncells() * re.nn);
    for c in 0..grid.ncells() {
        let nodes = grid.cell_nodes(c);
        for g in 0..re.nn {
            out.push(nodes.iter().enumerate().map(|(t, &n)| re.shape[g * re.nn + t] * u.values[n]).sum());
        }
    }
    out
}

/// `(⨍ (u − v)²)^{1/2}` for two nodal functions on the same cube; `v` may be
/// absent (zero).
pub fn l2_distance(u: &DiscreteFunction, v: Option<&DiscreteFunction>) -> f64 {
    let grid = CubeGrid::new(&u.cube);
    let re = RefElement::new(grid.d);
    let mut acc = 0.0;
    for c in 0..grid.ncells() {
        let nodes = grid.cell_nodes(c);
        for g in 0..re.nn {
            let x: f64 = nodes
                .iter()
                .enumerate()
                .map(|(t, &n)| re.shape[g * re.nn + t] * (u.values[n] - v.map_or(0.0, |v| v.values[n])))
                .sum();
            acc += re.w * x * x;
        }
    }
    (acc / grid.ncells() as f64).sqrt()
}

/// Slacks of the coarse-graining inequalities for one a-harmonic function
/// (nonnegative when the inequality holds).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InequalityReport {
    /// `√2‖s−s*‖^{1/2}E^{1/2} − |⨍(a*(U) − a)∇w|`.
    pub grad_to_flux: f64,
    /// `½E − ½(⨍∇w)·s*(⨍∇w)`.
    pub gradient: f64,
    /// `½E − ½(⨍a∇w)·b⁻¹(⨍a∇w)`.
    pub flux: f64,
    /// `½⨍X·𝐀X − ½(X)·A_*(X)` with `X = (∇w, a∇w)`.
    pub stacked: f64,
    /// Energy `E = ⨍∇w·s∇w`.
    pub energy: f64,
}

pub fn coarse_grain_inequalities(field: &CoefficientField, cube: &TriadicCube, w: &DiscreteFunction) -> Result<InequalityReport> {
    if &w.cube != cube {
        return Err(Error::BadSpec("function lives on a different cube".into()));
    }
    let a = coarse_matrix(field, cube)?;
    let d = a.d();
    let comp = a.components()?;
    let (g, f, e) = gradient_averages(field, w)?;
    let gv = nalgebra::DVector::from_column_slice(&g);
    let fv = nalgebra::DVector::from_column_slice(&f);
    let astar = comp.s_star.mat() - comp.k.transpose();
    let diff = &astar * &gv - &fv;
    let gap = matalg::spec_norm(&(comp.s.mat() - comp.s_star.mat()));
    let grad_to_flux = 2f64.sqrt() * gap.max(0.0).sqrt() * e.max(0.0).sqrt() - diff.norm();
    let gradient = 0.5 * e - 0.5 * gv.dot(&(comp.s_star.mat() * &gv));
    let binv = matalg::inverse(comp.b.mat())?;
    let flux = 0.5 * e - 0.5 * fv.dot(&(&binv * &fv));
    let a_star = matalg::inverse(star_dual(&a).mat())?;
    let x = nalgebra::DVector::from_fn(2 * d, |i, _| if i < d { g[i] } else { f[i - d] });
    let stacked = e - 0.5 * x.dot(&(&a_star * &x));
    let report = InequalityReport { grad_to_flux, gradient, flux, stacked, energy: e };
    let tol = 1e-8 * (1.0 + e);
    if grad_to_flux < -tol || gradient < -tol || flux < -tol || stacked < -tol {
        return Err(Error::InequalityViolated(format!("{report:?}")));
    }
    Ok(report)
}

/// Loewner slacks of the bounds `(⨍𝐀⁻¹)⁻¹ ≤ A_* ≤ A ≤ ⨍𝐀` and `s* ≤ s`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SqueezeReport {
    pub lower: f64,
    pub upper: f64,
    pub order: f64,
}

pub fn squeeze_check(field: &CoefficientField, cube: &TriadicCube, a: &BlockMatrix) -> Result<SqueezeReport> {
    let data = CellData::new(field, cube)?;
    let n2 = 2 * data.d;
    let mut inv_mean = Mat::zeros(n2, n2);
    for c in 0..data.grid.ncells() {
        inv_mean += matalg::inverse(&Mat::from_row_slice(n2, n2, data.blk(c)))?;
    }
    inv_mean /= data.volume();
    let lower_bound = matalg::inverse(&inv_mean)?;
    let a_star = matalg::inverse(star_dual(a).mat())?;
    let comp = a.components()?;
    Ok(SqueezeReport {
        lower: matalg::loewner_slack(&lower_bound, &a_star),
        upper: matalg::loewner_slack(a.mat(), &data.mean_block()),
        order: matalg::loewner_slack(comp.s_star.mat(), comp.s.mat()),
    })
}

/// Smallest eigenvalues of `⨍_children A − A(cube)` and the analogue for
/// `A_*⁻¹`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubadditivityReport {
    pub slack_a: f64,
    pub slack_astar_inv: f64,
}

pub fn subadditivity_check(field: &CoefficientField, cube: &TriadicCube, k: u32) -> Result<SubadditivityReport> {
    let parent = coarse_matrix(field, cube)?;
    let kids = partition(cube, k)?;
    let n2 = 2 * cube.d();
    let mut mean = Mat::zeros(n2, n2);
    for c in &kids {
        mean += coarse_matrix(field, c)?.mat();
    }
    mean /= kids.len() as f64;
    let mean = BlockMatrix::new(cube.d(), mean);
    Ok(SubadditivityReport {
        slack_a: matalg::loewner_slack(parent.mat(), mean.mat()),
        slack_astar_inv: matalg::loewner_slack(star_dual(&parent).mat(), star_dual(&mean).mat()),
    })
}
