//! Small dense matrix algebra for the 2d×2d coarse-grained block matrices.
//!
//! A block matrix has the form
//! `[[s + kᵗ s*⁻¹ k, −kᵗ s*⁻¹], [−s*⁻¹ k, s*⁻¹]]` with `s`, `s*` symmetric
//! positive definite and `k` an arbitrary d×d matrix.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real matrix used throughout.
pub type Mat = DMatrix<f64>;

/// Symmetric matrix. Construction symmetrizes its input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct SymMatrix(Mat);

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(a: SymMatrix) -> Self {
        a.0.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = String;
    fn try_from(rows: Vec<Vec<f64>>) -> std::result::Result<Self, String> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err("symmetric matrix must be square".into());
        }
        Ok(SymMatrix::new(Mat::from_fn(n, n, |i, j| rows[i][j])))
    }
}

impl SymMatrix {
    pub fn new(m: Mat) -> Self {
        assert!(m.is_square(), "SymMatrix must be square");
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn identity(d: usize) -> Self {
        SymMatrix(Mat::identity(d, d))
    }

    pub fn scalar(d: usize, c: f64) -> Self {
        SymMatrix(Mat::identity(d, d) * c)
    }

    pub fn diag(v: &[f64]) -> Self {
        SymMatrix(Mat::from_diagonal(&nalgebra::DVector::from_column_slice(v)))
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        Self::new(mat_from_rows(rows))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        eigh(&self.0).0
    }

    pub fn min_eig(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn max_eig(&self) -> f64 {
        *self.eigenvalues().last().unwrap()
    }

    pub fn is_pd(&self) -> bool {
        self.min_eig() > 0.0
    }

    pub fn sqrt(&self) -> Result<SymMatrix> {
        self.check_pd()?;
        Ok(SymMatrix(sym_apply(&self.0, f64::sqrt)))
    }

    pub fn inv_sqrt(&self) -> Result<SymMatrix> {
        self.check_pd()?;
        Ok(SymMatrix(sym_apply(&self.0, |x| 1.0 / x.sqrt())))
    }

    pub fn inverse(&self) -> Result<SymMatrix> {
        self.check_pd()?;
        Ok(SymMatrix(sym_apply(&self.0, |x| 1.0 / x)))
    }

    pub fn check_pd(&self) -> Result<()> {
        let m = self.min_eig();
        if m > 0.0 && m.is_finite() {
            Ok(())
        } else {
            Err(Error::NotPositiveDefinite(m))
        }
    }
}

/// Antisymmetric matrix stored by its strict upper triangle (row-major).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SkewRepr")]
pub struct SkewMatrix {
    dim: usize,
    upper: Vec<f64>,
}

#[derive(Deserialize)]
struct SkewRepr {
    dim: usize,
    upper: Vec<f64>,
}

impl TryFrom<SkewRepr> for SkewMatrix {
    type Error = String;
    fn try_from(r: SkewRepr) -> std::result::Result<Self, String> {
        if r.upper.len() != r.dim * r.dim.saturating_sub(1) / 2 {
            return Err(format!("skew matrix of dimension {} needs {} coordinates", r.dim, r.dim * r.dim.saturating_sub(1) / 2));
        }
        Ok(SkewMatrix { dim: r.dim, upper: r.upper })
    }
}

impl SkewMatrix {
    pub fn zero(dim: usize) -> Self {
        SkewMatrix { dim, upper: vec![0.0; dim * dim.saturating_sub(1) / 2] }
    }

    /// Coordinates in the order (0,1), (0,2), ..., (1,2), ...
    pub fn from_coords(dim: usize, coords: &[f64]) -> Self {
        assert_eq!(coords.len(), dim * dim.saturating_sub(1) / 2);
        SkewMatrix { dim, upper: coords.to_vec() }
    }

    /// Skew part (m − mᵗ)/2 of an arbitrary square matrix.
    pub fn skew_part(m: &Mat) -> Self {
        let d = m.nrows();
        let mut upper = Vec::with_capacity(d * d.saturating_sub(1) / 2);
        for i in 0..d {
            for j in i + 1..d {
                upper.push(0.5 * (m[(i, j)] - m[(j, i)]));
            }
        }
        SkewMatrix { dim: d, upper }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coords(&self) -> &[f64] {
        &self.upper
    }

    pub fn to_mat(&self) -> Mat {
        let d = self.dim;
        let mut m = Mat::zeros(d, d);
        let mut it = self.upper.iter();
        for i in 0..d {
            for j in i + 1..d {
                let v = *it.next().unwrap();
                m[(i, j)] = v;
                m[(j, i)] = -v;
            }
        }
        m
    }
}

pub fn mat_from_rows(rows: &[&[f64]]) -> Mat {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    Mat::from_fn(n, m, |i, j| rows[i][j])
}

/// Symmetric eigen-decomposition with eigenvalues sorted ascending.
pub fn eigh(m: &Mat) -> (Vec<f64>, Mat) {
    let n = m.nrows();
    if n == 0 {
        return (vec![], Mat::zeros(0, 0));
    }
    let sym = (m + m.transpose()) * 0.5;
    let e = SymmetricEigen::new(sym);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| e.eigenvalues[a].total_cmp(&e.eigenvalues[b]));
    let vals = idx.iter().map(|&i| e.eigenvalues[i]).collect();
    let vecs = Mat::from_fn(n, n, |r, c| e.eigenvectors[(r, idx[c])]);
    (vals, vecs)
}

/// Applies a scalar function to a symmetric matrix spectrally.
pub fn sym_apply(m: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    let (vals, v) = eigh(m);
    let n = vals.len();
    let mut scaled = v.clone();
    for c in 0..n {
        let fv = f(vals[c]);
        for r in 0..n {
            scaled[(r, c)] *= fv;
        }
    }
    let out = scaled * v.transpose();
    (&out + out.transpose()) * 0.5
}

pub fn min_eig(m: &Mat) -> f64 {
    eigh(m).0.first().copied().unwrap_or(0.0)
}

pub fn max_eig(m: &Mat) -> f64 {
    eigh(m).0.last().copied().unwrap_or(0.0)
}

/// Spectral norm (largest singular value).
pub fn spec_norm(m: &Mat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Smallest eigenvalue of `b − a`; nonnegative iff `a ≤ b` in Loewner order.
pub fn loewner_slack(a: &Mat, b: &Mat) -> f64 {
    min_eig(&(b - a))
}

pub fn inverse(m: &Mat) -> Result<Mat> {
    m.clone()
        .try_inverse()
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::DegenerateBlock("singular matrix".into()))
}

/// Symmetric 2d×2d coarse-grained matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "BlockRepr", try_from = "BlockRepr")]
pub struct BlockMatrix {
    d: usize,
    m: Mat,
}

/// Serialized form: dimension and row-major entries.
#[derive(Serialize, Deserialize)]
struct BlockRepr {
    d: usize,
    entries: Vec<f64>,
}

impl From<BlockMatrix> for BlockRepr {
    fn from(a: BlockMatrix) -> Self {
        BlockRepr { d: a.d, entries: a.flat() }
    }
}

impl TryFrom<BlockRepr> for BlockMatrix {
    type Error = String;
    fn try_from(r: BlockRepr) -> std::result::Result<Self, String> {
        if r.entries.len() != 4 * r.d * r.d {
            return Err(format!("expected {} entries, got {}", 4 * r.d * r.d, r.entries.len()));
        }
        Ok(BlockMatrix::from_flat(r.d, &r.entries))
    }
}

/// Named blocks of a [`BlockMatrix`].
#[derive(Clone, Debug)]
pub struct Components {
    pub s_star: SymMatrix,
    pub k: Mat,
    pub s: SymMatrix,
    pub b: SymMatrix,
}

impl BlockMatrix {
    /// Wraps a 2d×2d matrix, symmetrizing it.
    pub fn new(d: usize, m: Mat) -> Self {
        assert_eq!(m.nrows(), 2 * d);
        assert_eq!(m.ncols(), 2 * d);
        let t = m.transpose();
        BlockMatrix { d, m: (m + t) * 0.5 }
    }

    pub fn identity(d: usize) -> Self {
        BlockMatrix { d, m: Mat::identity(2 * d, 2 * d) }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn mat(&self) -> &Mat {
        &self.m
    }

    pub fn block(&self, i: usize, j: usize) -> Mat {
        let d = self.d;
        self.m.view((i * d, j * d), (d, d)).into_owned()
    }

    pub fn e11(&self) -> Mat {
        self.block(0, 0)
    }
    pub fn e12(&self) -> Mat {
        self.block(0, 1)
    }
    pub fn e21(&self) -> Mat {
        self.block(1, 0)
    }
    pub fn e22(&self) -> Mat {
        self.block(1, 1)
    }

    /// Row-major flattening of all (2d)² entries.
    pub fn flat(&self) -> Vec<f64> {
        let n = 2 * self.d;
        (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| self.m[(i, j)]).collect()
    }

    pub fn from_flat(d: usize, v: &[f64]) -> Self {
        let n = 2 * d;
        assert_eq!(v.len(), n * n);
        BlockMatrix::new(d, Mat::from_row_slice(n, n, v))
    }

    pub fn scale(&self, c: f64) -> Self {
        BlockMatrix { d: self.d, m: &self.m * c }
    }

    pub fn add(&self, other: &BlockMatrix) -> Self {
        BlockMatrix { d: self.d, m: &self.m + &other.m }
    }

    pub fn sub(&self, other: &BlockMatrix) -> Self {
        BlockMatrix { d: self.d, m: &self.m - &other.m }
    }

    pub fn components(&self) -> Result<Components> {
        extract_components(self)
    }

    /// (−p, q) stacked.
    fn stack(p: &[f64], q: &[f64], sign_p: f64) -> nalgebra::DVector<f64> {
        let d = p.len();
        nalgebra::DVector::from_fn(2 * d, |i, _| if i < d { sign_p * p[i] } else { q[i - d] })
    }

    /// `J(p,q) = ½(−p,q)·A(−p,q) − p·q`.
    pub fn j(&self, p: &[f64], q: &[f64]) -> f64 {
        let x = Self::stack(p, q, -1.0);
        0.5 * x.dot(&(&self.m * &x)) - dot(p, q)
    }

    /// `J*(p,q) = ½(p,q)·A(p,q) − p·q`.
    pub fn j_star(&self, p: &[f64], q: &[f64]) -> f64 {
        let x = Self::stack(p, q, 1.0);
        0.5 * x.dot(&(&self.m * &x)) - dot(p, q)
    }

    pub fn is_psd(&self) -> bool {
        min_eig(&self.m) >= -1e-12 * spec_norm(&self.m)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Assembles the block matrix of `(s, s*, k)`.
pub fn assemble_block(s: &SymMatrix, s_star: &SymMatrix, k: &Mat) -> Result<BlockMatrix> {
    let d = s.dim();
    assert_eq!(s_star.dim(), d);
    assert_eq!((k.nrows(), k.ncols()), (d, d));
    let si = inverse(s_star.mat())?;
    let si = (&si + si.transpose()) * 0.5;
    let kt = k.transpose();
    let mut m = Mat::zeros(2 * d, 2 * d);
    m.view_mut((0, 0), (d, d)).copy_from(&(s.mat() + &kt * &si * k));
    m.view_mut((0, d), (d, d)).copy_from(&(-(&kt * &si)));
    m.view_mut((d, 0), (d, d)).copy_from(&(-(&si * k)));
    m.view_mut((d, d), (d, d)).copy_from(&si);
    Ok(BlockMatrix::new(d, m))
}

/// Inverse of [`assemble_block`]: `s* = E22⁻¹`, `k = −E22⁻¹E21`,
/// `s = E11 − E12 E22⁻¹ E21`, `b = E11`.
pub fn extract_components(a: &BlockMatrix) -> Result<Components> {
    let e22 = a.e22();
    let s_star = inverse(&e22).map_err(|_| Error::DegenerateBlock("E22 is singular".into()))?;
    let k = -(&s_star * a.e21());
    let s = a.e11() - a.e12() * &s_star * a.e21();
    Ok(Components {
        s_star: SymMatrix::new(s_star),
        k,
        s: SymMatrix::new(s),
        b: SymMatrix::new(a.e11()),
    })
}

/// `G_hᵗ A G_h` with `G_h = [[I,0],[h,I]]`; turns `k` into `k − h`.
pub fn center(a: &BlockMatrix, h: &SkewMatrix) -> BlockMatrix {
    let d = a.d();
    assert_eq!(h.dim(), d);
    let mut g = Mat::identity(2 * d, 2 * d);
    g.view_mut((d, 0), (d, d)).copy_from(&h.to_mat());
    BlockMatrix::new(d, g.transpose() * a.mat() * g)
}

/// `R A R` with `R = [[0,I],[I,0]]`, which equals `A_*⁻¹`.
pub fn star_dual(a: &BlockMatrix) -> BlockMatrix {
    let d = a.d();
    let n = 2 * d;
    let perm = |i: usize| if i < d { i + d } else { i - d };
    BlockMatrix::new(d, Mat::from_fn(n, n, |i, j| a.mat()[(perm(i), perm(j))]))
}

/// Ellipticity and aspect ratios of a block matrix.
#[derive(Clone, Debug)]
pub struct EllipticityReport {
    pub theta: f64,
    pub pi: f64,
    pub h_opt: SkewMatrix,
    pub lambda: f64,
    pub big_lambda: f64,
}

struct ThetaParts {
    s: Mat,
    k: Mat,
    s_star_inv: Mat,
    s_star_inv_sqrt: Mat,
}

impl ThetaParts {
    fn core(&self, h: &SkewMatrix) -> Mat {
        let kh = &self.k - h.to_mat();
        &self.s + kh.transpose() * &self.s_star_inv * &kh
    }
    fn theta(&self, h: &SkewMatrix) -> f64 {
        max_eig(&(&self.s_star_inv_sqrt * self.core(h) * &self.s_star_inv_sqrt))
    }
    fn big_lambda(&self, h: &SkewMatrix) -> f64 {
        max_eig(&self.core(h))
    }
}

/// Θ, Λ, λ and Π of a block matrix, minimizing over constant skew shifts.
pub fn ellipticity_ratio(a: &BlockMatrix) -> Result<EllipticityReport> {
    let c = extract_components(a)?;
    let d = a.d();
    c.s_star.check_pd()?;
    let parts = ThetaParts {
        s: c.s.mat().clone(),
        k: c.k.clone(),
        s_star_inv: c.s_star.inverse()?.into_mat(),
        s_star_inv_sqrt: c.s_star.inv_sqrt()?.into_mat(),
    };
    let lambda = c.s_star.min_eig();
    let bound = 2.0 * (spec_norm(&c.k) + spec_norm(c.s.mat()) + spec_norm(c.s_star.mat())) + 1.0;
    let (h_opt, theta) = minimize_skew(d, &c.k, bound, |h| parts.theta(h))?;
    let (_, big_lambda) = minimize_skew(d, &c.k, bound, |h| parts.big_lambda(h))?;
    Ok(EllipticityReport { theta, pi: big_lambda / lambda, h_opt, lambda, big_lambda })
}

fn minimize_skew(
    d: usize,
    k: &Mat,
    bound: f64,
    f: impl Fn(&SkewMatrix) -> f64,
) -> Result<(SkewMatrix, f64)> {
    match d {
        0 | 1 => {
            let h = SkewMatrix::zero(d);
            let v = f(&h);
            Ok((h, v))
        }
        2 => {
            let g = |c: f64| f(&SkewMatrix::from_coords(2, &[c]));
            let (c, v) = golden_section(g, -bound, bound, 1e-10);
            Ok((SkewMatrix::from_coords(2, &[c]), v))
        }
        _ => {
            let nc = d * (d - 1) / 2;
            let g = |x: &[f64]| f(&SkewMatrix::from_coords(d, x));
            let start = SkewMatrix::skew_part(k).coords().to_vec();
            let scale = 0.1 * bound.max(1.0);
            let r1 = nelder_mead(&g, &start, scale, 500);
            let r2 = nelder_mead(&g, &r1.x, 0.1 * scale, 500);
            let r3 = nelder_mead(&g, &vec![0.0; nc], scale, 500);
            let best = [r1, r2, r3].into_iter().min_by(|a, b| a.f.total_cmp(&b.f)).unwrap();
            if best.converged || best.spread <= 1e-9 * best.f.abs().max(1.0) {
                Ok((SkewMatrix::from_coords(d, &best.x), best.f))
            } else {
                Err(Error::ThetaNoConverge { best_theta: best.f })
            }
        }
    }
}

/// Golden-section search for a unimodal function on `[lo, hi]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    let (mut x, mut v) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    for c in [lo, hi, 0.5 * (lo + hi)] {
        let fc = f(c);
        if fc < v {
            x = c;
            v = fc;
        }
    }
    (x, v)
}

struct NmResult {
    x: Vec<f64>,
    f: f64,
    spread: f64,
    converged: bool,
}

fn nelder_mead(f: &impl Fn(&[f64]) -> f64, x0: &[f64], step: f64, max_iter: usize) -> NmResult {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        simplex.push(x);
    }
    let mut vals: Vec<f64> = simplex.iter().map(|x| f(x)).collect();
    let mut converged = false;
    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        let spread = vals[n] - vals[0];
        let size = simplex[1..]
            .iter()
            .map(|x| x.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread <= 1e-13 * vals[0].abs().max(1.0) && size <= 1e-10 {
            converged = true;
            break;
        }
        let centroid: Vec<f64> =
            (0..n).map(|j| simplex[..n].iter().map(|x| x[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (w - c)).collect()
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            if fe < fr {
                simplex[n] = xe;
                vals[n] = fe;
            } else {
                simplex[n] = xr;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            simplex[n] = xr;
            vals[n] = fr;
        } else {
            let (xc, fc) = if fr < vals[n] {
                let x = along(-0.5);
                let v = f(&x);
                (x, v)
            } else {
                let x = along(0.5);
                let v = f(&x);
                (x, v)
            };
            if fc < vals[n].min(fr) {
                simplex[n] = xc;
                vals[n] = fc;
            } else {
                let best = simplex[0].clone();
                for i in 1..=n {
                    let x: Vec<f64> = simplex[i].iter().zip(&best).map(|(a, b)| b + 0.5 * (a - b)).collect();
                    vals[i] = f(&x);
                    simplex[i] = x;
                }
            }
        }
    }
    let (bi, _) = vals.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let spread = vals.iter().cloned().fold(f64::MIN, f64::max) - vals[bi];
    NmResult { x: simplex[bi].clone(), f: vals[bi], spread, converged }
}

/// Metric geometric mean `A # B = A^{1/2}(A^{-1/2} B A^{-1/2})^{1/2} A^{1/2}`.
pub fn metric_geomean(a: &SymMatrix, b: &SymMatrix) -> Result<SymMatrix> {
    let ah = a.sqrt()?;
    let aih = a.inv_sqrt()?;
    b.check_pd()?;
    let mid = SymMatrix::new(aih.mat() * b.mat() * aih.mat()).sqrt()?;
    Ok(SymMatrix::new(ah.mat() * mid.mat() * ah.mat()))
}

/// Spectral geometric mean `(A⁻¹ # B)^{1/2} A (A⁻¹ # B)^{1/2}`.
pub fn spectral_geomean(a: &SymMatrix, b: &SymMatrix) -> Result<SymMatrix> {
    let x = metric_geomean(&a.inverse()?, b)?.sqrt()?;
    Ok(SymMatrix::new(x.mat() * a.mat() * x.mat()))
}

/// Adapted geometry derived from a reference block matrix.
#[derive(Clone, Debug)]
pub struct AdaptedGeometry {
    pub m0: SymMatrix,
    pub lambda0: f64,
    pub q0: SymMatrix,
    pub k0_digits: u32,
}

const K0_DIGITS_CAP: u32 = 30;

/// `m₀ = E11 # E22⁻¹` and its lattice rounding `q₀`.
pub fn adapted_q0(a: &BlockMatrix, k0_digits: u32) -> Result<AdaptedGeometry> {
    let c = extract_components(a)?;
    let m0 = metric_geomean(&c.b, &c.s_star)?;
    let lambda0 = m0.min_eig();
    let target = SymMatrix::new(m0.sqrt()?.mat() / lambda0.sqrt());
    let d = a.d();
    for k in k0_digits..=K0_DIGITS_CAP {
        let scale = 3f64.powi(k as i32);
        let q = Mat::from_fn(d, d, |i, j| {
            let v = scale * target.mat()[(i, j)];
            (v - 1e-9 * v.abs().max(1.0)).ceil() / scale
        });
        let q = SymMatrix::new(q);
        let lo = loewner_slack(&(target.mat() * 0.99), q.mat());
        let hi = loewner_slack(q.mat(), &(target.mat() * 1.01));
        if lo >= 0.0 && hi >= 0.0 {
            return Ok(AdaptedGeometry { m0, lambda0, q0: q, k0_digits: k });
        }
    }
    Err(Error::AdaptationFailed(K0_DIGITS_CAP))
}

/// Outcome of [`two_sided_bound`].
#[derive(Clone, Copy, Debug)]
pub struct TwoSided {
    pub value: f64,
    pub bound: f64,
    pub theta_tilde: f64,
}

/// Given `A ≤ E`, returns `‖E^{-1/2} A E^{-1/2} − I‖` together with the
/// bound `(2 + Θ̃^{1/2})(Θ̃ − 1)` where `Θ̃ = ‖s̃*^{-1/2} s̃ s̃*^{-1/2}‖` of `E`.
pub fn two_sided_bound(a: &BlockMatrix, e: &BlockMatrix) -> Result<TwoSided> {
    let scale = spec_norm(e.mat()).max(1.0);
    let slack = loewner_slack(a.mat(), e.mat());
    if slack < -1e-10 * scale {
        return Err(Error::OrderViolated(slack));
    }
    let c = extract_components(e)?;
    let sih = c.s_star.inv_sqrt()?;
    let theta_tilde = max_eig(&(sih.mat() * c.s.mat() * sih.mat()));
    let eih = SymMatrix::new(e.mat().clone()).inv_sqrt()?;
    let n = 2 * a.d();
    let dev = eih.mat() * a.mat() * eih.mat() - Mat::identity(n, n);
    let value = spec_norm(&dev);
    let bound = (2.0 + theta_tilde.max(0.0).sqrt()) * (theta_tilde - 1.0);
    if value > bound + 1e-9 {
        return Err(Error::InequalityViolated(format!(
            "two-sided bound: {value} > {bound}"
        )));
    }
    Ok(TwoSided { value, bound, theta_tilde })
}

/// Smallest eigenvalue over both signs of `(s − s*) ∓ (k + kᵗ)`.
pub fn symm_part_gap_check(a: &BlockMatrix) -> Result<f64> {
    let c = extract_components(a)?;
    let gap = c.s.mat() - c.s_star.mat();
    let ks = &c.k + c.k.transpose();
    Ok(min_eig(&(&gap - &ks)).min(min_eig(&(&gap + &ks))))
}
