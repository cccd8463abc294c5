//! Sparse stencil matrices and the band solvers used by the cell problems.

use std::time::Instant;

use super::{SolveReport, SolverOptions};
use crate::error::{Error, Result};

pub(crate) const ABSENT: usize = usize::MAX;

/// Row-wise sparse matrix with a fixed number of slots per row.
#[derive(Clone, Debug)]
pub(crate) struct StencilMatrix {
    pub n: usize,
    pub width: usize,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl StencilMatrix {
    pub fn new(n: usize, width: usize) -> Self {
        StencilMatrix { n, width, cols: vec![ABSENT; n * width], vals: vec![0.0; n * width] }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            let row = i * self.width;
            for s in 0..self.width {
                let c = self.cols[row + s];
                if c != ABSENT {
                    acc += self.vals[row + s] * x[c];
                }
            }
            y[i] = acc;
        }
    }

    pub fn bandwidth(&self) -> usize {
        let mut bw = 0;
        for i in 0..self.n {
            for s in 0..self.width {
                let c = self.cols[i * self.width + s];
                if c != ABSENT {
                    bw = bw.max(c.abs_diff(i));
                }
            }
        }
        bw
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for i in 0..self.n {
            for s in 0..self.width {
                if self.cols[i * self.width + s] == i {
                    d[i] += self.vals[i * self.width + s];
                }
            }
        }
        d
    }

    #[cfg(test)]
    pub fn is_symmetric(&self) -> bool {
        let get = |i: usize, j: usize| -> f64 {
            (0..self.width)
                .filter(|s| self.cols[i * self.width + s] == j)
                .map(|s| self.vals[i * self.width + s])
                .sum()
        };
        for i in 0..self.n {
            for s in 0..self.width {
                let j = self.cols[i * self.width + s];
                if j != ABSENT && j > i {
                    let (a, b) = (get(i, j), get(j, i));
                    if (a - b).abs() > 1e-13 * (a.abs() + b.abs()).max(1e-300) {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// Cholesky factor of a symmetric band matrix, lower band stored row-wise.
struct CholBand {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl CholBand {
    fn factor(m: &StencilMatrix, bw: usize) -> Result<Self> {
        let n = m.n;
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            for s in 0..m.width {
                let j = m.cols[i * m.width + s];
                if j != ABSENT && j <= i {
                    l[i * w + j + bw - i] += m.vals[i * m.width + s];
                }
            }
        }
        for i in 0..n {
            let i0 = i.saturating_sub(bw);
            for j in i0..=i {
                let (ri, rj) = (i * w + bw - i, j * w + bw - j);
                let k0 = i0.max(j.saturating_sub(bw));
                let s = l[ri + j]
                    - l[ri + k0..ri + j].iter().zip(&l[rj + k0..rj + j]).map(|(x, y)| x * y).sum::<f64>();
                if j < i {
                    l[ri + j] = s / l[rj + j];
                } else {
                    if !(s > 0.0) {
                        return Err(Error::NotPositiveDefinite(s));
                    }
                    l[ri + i] = s.sqrt();
                }
            }
        }
        Ok(CholBand { n, bw, l })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let mut y = b.to_vec();
        for i in 0..n {
            let r = i * w + bw - i;
            let mut s = y[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.l[r + k] * y[k];
            }
            y[i] = s / self.l[r + i];
        }
        for i in (0..n).rev() {
            let r = i * w + bw - i;
            y[i] /= self.l[r + i];
            let xi = y[i];
            for k in i.saturating_sub(bw)..i {
                y[k] -= self.l[r + k] * xi;
            }
        }
        y
    }
}

/// LU factor without pivoting of a band matrix whose symmetric part is
/// positive definite.
struct LuBand {
    n: usize,
    bw: usize,
    a: Vec<f64>,
}

impl LuBand {
    fn factor(m: &StencilMatrix, bw: usize) -> Result<Self> {
        let n = m.n;
        let w = 2 * bw + 1;
        let mut a = vec![0.0; n * w];
        for i in 0..n {
            for s in 0..m.width {
                let j = m.cols[i * m.width + s];
                if j != ABSENT {
                    a[i * w + j + bw - i] += m.vals[i * m.width + s];
                }
            }
        }
        for k in 0..n {
            let piv = a[k * w + bw];
            if !(piv.abs() > 0.0) {
                return Err(Error::NotPositiveDefinite(piv));
            }
            let hi = (k + bw).min(n - 1);
            for i in k + 1..=hi {
                let ik = i * w + k + bw - i;
                let f = a[ik] / piv;
                a[ik] = f;
                if f != 0.0 {
                    let (top, bottom) = a.split_at_mut(i * w);
                    let src = &top[k * w + bw + 1..k * w + bw + 1 + (hi - k)];
                    let dst = &mut bottom[k + 1 + bw - i..k + 1 + bw - i + (hi - k)];
                    for (x, y) in dst.iter_mut().zip(src) {
                        *x -= f * y;
                    }
                }
            }
        }
        Ok(LuBand { n, bw, a })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw, w) = (self.n, self.bw, 2 * self.bw + 1);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.a[i * w + k + bw - i] * y[k];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in i + 1..=(i + bw).min(n.saturating_sub(1)) {
                s -= self.a[i * w + j + bw - i] * y[j];
            }
            y[i] = s / self.a[i * w + bw];
        }
        y
    }
}

/// LU factor with partial pivoting of a general band matrix (row windows
/// widened to hold the fill from row interchanges).
struct LuPivotBand {
    n: usize,
    kl: usize,
    ku: usize,
    /// `U` rows: columns `k..=k+ku`.
    u: Vec<f64>,
    /// Multipliers of step `k`: rows `k+1..=k+kl`.
    l: Vec<f64>,
    piv: Vec<usize>,
}

impl LuPivotBand {
    fn factor(m: &StencilMatrix, bw: usize) -> Result<Self> {
        let n = m.n;
        let kl = bw;
        let ku = 2 * bw;
        // row i holds columns i−kl ..= i+ku
        let w = kl + ku + 1;
        let mut a = vec![0.0; n * w];
        for i in 0..n {
            for s in 0..m.width {
                let j = m.cols[i * m.width + s];
                if j != ABSENT {
                    a[i * w + j + kl - i] += m.vals[i * m.width + s];
                }
            }
        }
        let at = |i: usize, j: usize| i * w + j + kl - i;
        let mut l = vec![0.0; n * kl.max(1)];
        let mut piv = vec![0; n];
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..n {
            let hi = (k + kl).min(n - 1);
            let (mut p, mut best) = (k, a[at(k, k)].abs());
            for i in k + 1..=hi {
                let v = a[at(i, k)].abs();
                if v > best {
                    p = i;
                    best = v;
                }
            }
            if !(best > 1e-300 * scale.max(1e-300)) {
                return Err(Error::DegenerateBlock(format!("singular pivot at row {k}")));
            }
            piv[k] = p;
            let last = (k + ku).min(n - 1);
            if p != k {
                for j in k..=last {
                    a.swap(at(k, j), at(p, j));
                }
            }
            let pv = a[at(k, k)];
            for i in k + 1..=hi {
                let f = a[at(i, k)] / pv;
                l[k * kl + (i - k - 1)] = f;
                if f != 0.0 {
                    for j in k + 1..=last {
                        let v = a[at(k, j)];
                        a[at(i, j)] -= f * v;
                    }
                }
            }
        }
        let mut u = vec![0.0; n * (ku + 1)];
        for k in 0..n {
            for j in k..=(k + ku).min(n - 1) {
                u[k * (ku + 1) + j - k] = a[at(k, j)];
            }
        }
        Ok(LuPivotBand { n, kl, ku, u, l, piv })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut y = b.to_vec();
        for k in 0..n {
            y.swap(k, self.piv[k]);
            let yk = y[k];
            if yk != 0.0 {
                for i in k + 1..=(k + kl).min(n - 1) {
                    y[i] -= self.l[k * kl + i - k - 1] * yk;
                }
            }
        }
        for k in (0..n).rev() {
            let row = &self.u[k * (ku + 1)..(k + 1) * (ku + 1)];
            let mut s = y[k];
            for j in k + 1..=(k + ku).min(n - 1) {
                s -= row[j - k] * y[j];
            }
            y[k] = s / row[0];
        }
        y
    }
}

enum Factor {
    Chol(CholBand),
    Lu(LuBand),
    LuPivot(LuPivotBand),
    Iterative,
}

/// Solver for one assembled matrix and many right-hand sides.
pub(crate) struct LinearSolver<'a> {
    m: &'a StencilMatrix,
    factor: Factor,
    diag: Vec<f64>,
    opts: SolverOptions,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl<'a> LinearSolver<'a> {
    pub fn new(m: &'a StencilMatrix, symmetric: bool, opts: &SolverOptions) -> Result<Self> {
        let bw = m.bandwidth();
        let w = if symmetric { bw + 1 } else { 2 * bw + 1 };
        let factor = if m.n * w <= opts.max_band_entries {
            if symmetric {
                Factor::Chol(CholBand::factor(m, bw)?)
            } else {
                Factor::Lu(LuBand::factor(m, bw)?)
            }
        } else {
            Factor::Iterative
        };
        Ok(LinearSolver { m, factor, diag: m.diagonal(), opts: opts.clone() })
    }

    /// Direct solver for a symmetric indefinite matrix; `None` when the band
    /// storage would exceed `opts.max_band_entries`.
    pub fn new_indefinite(m: &'a StencilMatrix, opts: &SolverOptions) -> Result<Option<Self>> {
        let bw = m.bandwidth();
        if m.n * (4 * bw + 1) > opts.max_band_entries {
            return Ok(None);
        }
        let factor = Factor::LuPivot(LuPivotBand::factor(m, bw)?);
        Ok(Some(LinearSolver { m, factor, diag: m.diagonal(), opts: opts.clone() }))
    }

    /// Solves `M x = b` to relative residual `opts.tol`.
    pub fn solve(&self, b: &[f64]) -> Result<(Vec<f64>, SolveReport)> {
        let start = Instant::now();
        let n = self.m.n;
        let bn = norm(b);
        if n == 0 || bn == 0.0 {
            return Ok((vec![0.0; n], SolveReport { iterations: 0, residual: 0.0, wall_time: 0.0 }));
        }
        let (x, iterations, residual) = match &self.factor {
            Factor::Iterative => self.pcg(b, bn)?,
            f => {
                let apply = |r: &[f64]| match f {
                    Factor::Chol(c) => c.solve(r),
                    Factor::Lu(l) => l.solve(r),
                    Factor::LuPivot(l) => l.solve(r),
                    Factor::Iterative => unreachable!(),
                };
                let mut x = apply(b);
                let mut r = vec![0.0; n];
                let mut it = 1;
                loop {
                    self.m.matvec(&x, &mut r);
                    for i in 0..n {
                        r[i] = b[i] - r[i];
                    }
                    let res = norm(&r) / bn;
                    if res <= 0.01 * self.opts.tol || it > 6 {
                        break (x, it, res);
                    }
                    let dx = apply(&r);
                    for i in 0..n {
                        x[i] += dx[i];
                    }
                    it += 1;
                }
            }
        };
        let report = SolveReport { iterations, residual, wall_time: start.elapsed().as_secs_f64() };
        if !(residual <= self.opts.tol) {
            return Err(Error::SolveFailed { iterations, residual });
        }
        Ok((x, report))
    }

    fn pcg(&self, b: &[f64], bn: f64) -> Result<(Vec<f64>, usize, f64)> {
        let n = self.m.n;
        let mut x = vec![0.0; n];
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&self.diag).map(|(a, d)| a / d).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let cap = 20 * n;
        for it in 1..=cap {
            self.m.matvec(&p, &mut ap);
            let alpha = rz / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let res = norm(&r) / bn;
            if res <= 0.1 * self.opts.tol {
                // recompute the true residual
                self.m.matvec(&x, &mut ap);
                let tr = norm(&b.iter().zip(&ap).map(|(u, v)| u - v).collect::<Vec<_>>()) / bn;
                return Ok((x, it, tr));
            }
            for i in 0..n {
                z[i] = r[i] / self.diag[i];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(Error::SolveFailed { iterations: cap, residual: norm(&r) / bn })
    }
}

/// Preconditioned MINRES for a symmetric `A` and SPD preconditioner `P⁻¹`.
/// Returns the solution, the iteration count and the true relative residual.
pub(crate) fn minres(
    apply_a: &dyn Fn(&[f64], &mut [f64]),
    apply_pinv: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    b: &[f64],
    tol: f64,
    cap: usize,
) -> Result<(Vec<f64>, usize, f64)> {
    let n = b.len();
    let bn = norm(b);
    let mut x = vec![0.0; n];
    if bn == 0.0 {
        return Ok((x, 0, 0.0));
    }
    let dotp = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let true_res = |x: &[f64]| {
        let mut ax = vec![0.0; n];
        apply_a(x, &mut ax);
        norm(&b.iter().zip(&ax).map(|(u, v)| u - v).collect::<Vec<_>>()) / bn
    };
    let mut v_prev = vec![0.0; n];
    let mut v = b.to_vec();
    let mut z = apply_pinv(&v)?;
    let mut gamma = dotp(&z, &v).sqrt();
    let mut gamma_prev = 1.0;
    let mut eta = gamma;
    let g0 = gamma;
    let (mut s_prev, mut s, mut c_prev, mut c) = (0.0, 0.0, 1.0, 1.0);
    let mut w_prev = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut az = vec![0.0; n];
    for it in 1..=cap {
        z.iter_mut().for_each(|x| *x /= gamma);
        apply_a(&z, &mut az);
        let delta = dotp(&az, &z);
        let v_new: Vec<f64> =
            (0..n).map(|i| az[i] - delta / gamma * v[i] - gamma / gamma_prev * v_prev[i]).collect();
        let z_new = apply_pinv(&v_new)?;
        let gamma_new = dotp(&z_new, &v_new).max(0.0).sqrt();
        let a0 = c * delta - c_prev * s * gamma;
        let a1 = a0.hypot(gamma_new);
        let a2 = s * delta + c_prev * c * gamma;
        let a3 = s_prev * gamma;
        let (c_new, s_new) = (a0 / a1, gamma_new / a1);
        let w_new: Vec<f64> = (0..n).map(|i| (z[i] - a3 * w_prev[i] - a2 * w[i]) / a1).collect();
        for i in 0..n {
            x[i] += c_new * eta * w_new[i];
        }
        eta *= -s_new;
        if eta.abs() <= 0.1 * tol * g0 || gamma_new == 0.0 {
            let r = true_res(&x);
            if r <= tol || gamma_new == 0.0 {
                return Ok((x, it, r));
            }
        }
        w_prev = std::mem::replace(&mut w, w_new);
        v_prev = std::mem::replace(&mut v, v_new);
        z = z_new;
        gamma_prev = gamma;
        gamma = gamma_new;
        s_prev = s;
        s = s_new;
        c_prev = c;
        c = c_new;
    }
    let r = true_res(&x);
    if r <= tol {
        return Ok((x, cap, r));
    }
    Err(Error::SolveFailed { iterations: cap, residual: r })
}
