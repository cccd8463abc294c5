//! Multiscale Besov seminorms of cell fields on triadic cubes, and the
//! Poincaré type inequalities built on them.
//!
//! Fields are given by their values on the unit cells of a cube (cells in
//! lexicographic order, `components` values per cell; vector values enter
//! through their Euclidean norm). Two conventions differ from the continuum
//! definitions:
//!
//! * level sums stop at `k = 0`: a cell field has no oscillation below the
//!   unit cell, so finer levels carry nothing new;
//! * the subcubes of level `k` are the unshifted partition `z + □_k`,
//!   `z ∈ 3^kℤ^d`, instead of the overlapping lattice `3^{k−1}ℤ^d`. Every
//!   shifted subcube is covered by at most `3^d` unshifted cubes of the next
//!   level, so the two seminorms agree up to factors `3^{d}`.

use serde::{Deserialize, Serialize};

use crate::cellsolve::{cell_averages, coarse_matrix, nodal_cell_means, nodal_gauss_values, DiscreteFunction, Layout};
use crate::error::{Error, Result};
use crate::fields::CoefficientField;
use crate::grids::{partition, TriadicCube};
use crate::matalg;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Positive,
    NegativeRing,
}

/// Exponents `(s, p, q)`; `p` and `q` may be infinite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BesovSpec {
    pub s: f64,
    pub p: f64,
    pub q: f64,
    pub sign: Sign,
}

impl BesovSpec {
    pub fn positive(s: f64, p: f64, q: f64) -> Self {
        BesovSpec { s, p, q, sign: Sign::Positive }
    }

    pub fn ring(s: f64, p: f64, q: f64) -> Self {
        BesovSpec { s, p, q, sign: Sign::NegativeRing }
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::BadSpec(format!("{m}: {self:?}")));
        if !(self.p >= 1.0) || !(self.q >= 1.0) {
            return bad("p and q must be at least 1");
        }
        match self.sign {
            Sign::Positive if self.q.is_infinite() && !(0.0..=1.0).contains(&self.s) => bad("s must lie in [0, 1]"),
            Sign::Positive if self.q.is_finite() && !(self.s > 0.0 && self.s < 1.0) => bad("s must lie in (0, 1) when q is finite"),
            Sign::NegativeRing if !(0.0..=1.0).contains(&self.s) => bad("s must lie in [0, 1]"),
            _ => Ok(()),
        }
    }

    /// Hölder conjugate exponents `(p', q')`.
    pub fn conjugates(&self) -> (f64, f64) {
        (conjugate(self.p), conjugate(self.q))
    }
}

pub fn conjugate(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    }
}

fn check_len(values: &[f64], components: usize, cube: &TriadicCube) -> Result<()> {
    if components == 0 || values.len() != cube.volume() * components {
        return Err(Error::BadSpec(format!(
            "field has {} values, cube needs {} x {components}",
            values.len(),
            cube.volume()
        )));
    }
    Ok(())
}

/// Index of the level-`k` block containing each cell.
fn block_index(cube: &TriadicCube, k: u32) -> Vec<usize> {
    let d = cube.d();
    let n = cube.side() as usize;
    let b = 3usize.pow(k);
    let nb = n / b;
    (0..n.pow(d as u32))
        .map(|mut c| {
            let mut x = vec![0; d];
            for a in (0..d).rev() {
                x[a] = c % n;
                c /= n;
            }
            x.iter().fold(0, |acc, v| acc * nb + v / b)
        })
        .collect()
}

/// Block means at level `k`, `components` values per block.
fn block_means(values: &[f64], components: usize, cube: &TriadicCube, k: u32) -> (Vec<usize>, Vec<f64>) {
    let idx = block_index(cube, k);
    let nblocks = 3usize.pow((cube.level - k) * cube.d() as u32);
    let per = 3usize.pow(k * cube.d() as u32) as f64;
    let mut m = vec![0.0; nblocks * components];
    for (c, &b) in idx.iter().enumerate() {
        for r in 0..components {
            m[b * components + r] += values[c * components + r];
        }
    }
    m.iter_mut().for_each(|v| *v /= per);
    (idx, m)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `p`-average of nonnegative numbers, `(mean x^p)^{1/p}` (max for `p = ∞`).
fn p_mean(xs: impl Iterator<Item = f64>, p: f64) -> f64 {
    if p.is_infinite() {
        return xs.fold(0.0, f64::max);
    }
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x.powf(p);
        n += 1;
    }
    (s / n as f64).powf(1.0 / p)
}

/// Level oscillations `(avg_z ⨍_{z+□_k} |g − (g)_{z+□_k}|^p)^{1/p}` for
/// `k = 0, …, n`.
pub fn level_oscillations(values: &[f64], components: usize, cube: &TriadicCube, p: f64) -> Result<Vec<f64>> {
    check_len(values, components, cube)?;
    Ok((0..=cube.level)
        .map(|k| {
            let (idx, m) = block_means(values, components, cube, k);
            p_mean(
                idx.iter().enumerate().map(|(c, &b)| {
                    let diff: Vec<f64> =
                        (0..components).map(|r| values[c * components + r] - m[b * components + r]).collect();
                    norm(&diff)
                }),
                p,
            )
        })
        .collect())
}

/// Level means `(avg_z |(f)_{z+□_k}|^p)^{1/p}` for `k = 0, …, n`.
pub fn level_means(values: &[f64], components: usize, cube: &TriadicCube, p: f64) -> Result<Vec<f64>> {
    check_len(values, components, cube)?;
    Ok((0..=cube.level)
        .map(|k| {
            let (_, m) = block_means(values, components, cube, k);
            p_mean(m.chunks(components).map(norm), p)
        })
        .collect())
}

fn lq_sum(terms: impl Iterator<Item = f64>, q: f64) -> f64 {
    if q.is_infinite() {
        terms.fold(0.0, f64::max)
    } else {
        terms.map(|t| t.powf(q)).sum::<f64>().powf(1.0 / q)
    }
}

/// Volume-normalized seminorm `[g]_{B^s_{p,q}(cube)}`.
pub fn besov_seminorm(values: &[f64], components: usize, cube: &TriadicCube, spec: &BesovSpec) -> Result<f64> {
    spec.check()?;
    if spec.sign != Sign::Positive {
        return Err(Error::BadSpec("besov_seminorm needs a positive spec".into()));
    }
    let osc = level_oscillations(values, components, cube, spec.p)?;
    Ok(lq_sum(osc.iter().enumerate().map(|(k, o)| 3f64.powf(-spec.s * k as f64) * o), spec.q))
}

/// Full norm `3^{−sn}|(g)_cube| + [g]_{B^s_{p,q}}`.
pub fn besov_norm(values: &[f64], components: usize, cube: &TriadicCube, spec: &BesovSpec) -> Result<f64> {
    let semi = besov_seminorm(values, components, cube, spec)?;
    let mean = *level_means(values, components, cube, 1.0)?.last().unwrap();
    Ok(3f64.powf(-spec.s * cube.level as f64) * mean + semi)
}

/// `3^{d+s}(Σ_k (3^{spk} avg_z |(f)_{z+□_k}|^p)^{q/p})^{1/q}`, the explicit
/// upper bound for the negative seminorm `B^{−s}_{p,q}`.
pub fn ring_negative_norm(values: &[f64], components: usize, cube: &TriadicCube, spec: &BesovSpec) -> Result<f64> {
    spec.check()?;
    if spec.sign != Sign::NegativeRing {
        return Err(Error::BadSpec("ring_negative_norm needs a negative-ring spec".into()));
    }
    let means = level_means(values, components, cube, spec.p)?;
    let d = cube.d() as f64;
    Ok(3f64.powf(d + spec.s) * lq_sum(means.iter().enumerate().map(|(k, m)| 3f64.powf(spec.s * k as f64) * m), spec.q))
}

/// Outcome of a Poincaré type check: `lhs ≤ C · rhs_unit` holds exactly for
/// `C ≥ constant`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PoincareReport {
    pub lhs: f64,
    pub rhs_unit: f64,
    pub constant: f64,
}

impl PoincareReport {
    fn new(lhs: f64, rhs_unit: f64) -> Self {
        let constant = if lhs == 0.0 { 0.0 } else { lhs / rhs_unit };
        PoincareReport { lhs, rhs_unit, constant }
    }

    /// `C · rhs_unit − lhs`.
    pub fn slack(&self, c: f64) -> f64 {
        c * self.rhs_unit - self.lhs
    }
}

/// Sobolev conjugate `dp/(d−p)` (infinite for `p ≥ d`).
pub fn sobolev_conjugate(p: f64, d: usize) -> f64 {
    if p >= d as f64 {
        f64::INFINITY
    } else {
        d as f64 * p / (d as f64 - p)
    }
}

fn cell_gradients(u: &DiscreteFunction) -> Result<Vec<f64>> {
    if !matches!(u.layout, Layout::Nodal(_)) {
        return Err(Error::BadSpec("expected a nodal function".into()));
    }
    let d = u.cube.d();
    // unit field: the gradient averages do not depend on the coefficients
    let unit = CoefficientField::constant(crate::fields::Region::from_cube(&u.cube), &matalg::Mat::identity(d, d))?;
    let av = cell_averages(&unit, u)?;
    let nc = 2 * d + 1;
    Ok(av.values.chunks(nc).flat_map(|c| c[..d].to_vec()).collect())
}

/// Multiscale Sobolev–Poincaré:
/// `‖u − (u)‖_{L^q} ≤ C 3^m Σ_{n≤m} 3^{(n−m)(d/q − d/p*)} (avg_y |(∇u)_{y+□_n}|^p)^{1/p}`,
/// `q ∈ [p, p*)`. The `L^q` norm is evaluated by Gauss quadrature.
pub fn multiscale_poincare_check(u: &DiscreteFunction, p: f64, q: f64) -> Result<PoincareReport> {
    let cube = &u.cube;
    let d = cube.d();
    let pstar = sobolev_conjugate(p, d);
    if !(p >= 1.0 && q >= p && q < pstar) {
        return Err(Error::BadSpec(format!("need q in [p, p*) with p = {p}, q = {q}, p* = {pstar}")));
    }
    let vals = nodal_gauss_values(u);
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let lhs = p_mean(vals.iter().map(|v| (v - mean).abs()), q);
    let grads = cell_gradients(u)?;
    let means = level_means(&grads, d, cube, p)?;
    let m = cube.level as f64;
    let expo = d as f64 / q - if pstar.is_infinite() { 0.0 } else { d as f64 / pstar };
    let rhs: f64 = means.iter().enumerate().map(|(n, f)| 3f64.powf((n as f64 - m) * expo) * f).sum();
    Ok(PoincareReport::new(lhs, 3f64.powf(m) * rhs))
}

/// `max_z |s*^{-1}(z+□_k)|^{1/2}` and `max_z |b(z+□_k)|^{1/2}` for every
/// level `k = 0, …, n`, from the (cached) coarse matrices.
pub fn coarse_maxima(field: &CoefficientField, cube: &TriadicCube) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut s_inv = Vec::new();
    let mut b = Vec::new();
    for k in 0..=cube.level {
        let (mut ms, mut mb) = (0.0f64, 0.0f64);
        for sub in partition(cube, k)? {
            let c = coarse_matrix(field, &sub)?.components()?;
            ms = ms.max(matalg::spec_norm(&matalg::inverse(c.s_star.mat())?));
            mb = mb.max(matalg::spec_norm(c.b.mat()));
        }
        s_inv.push(ms.sqrt());
        b.push(mb.sqrt());
    }
    Ok((s_inv, b))
}

/// Weak norm bounds for an a-harmonic function: the ring norms of `∇u` and
/// `a∇u` against their coarse-grained bounds
/// `3^{d+s} E^{1/2} Σ_k 3^{sk} max_z |s*^{-1}|^{1/2}` (resp. `|b|^{1/2}`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WeakNormReport {
    pub grad_lhs: f64,
    pub grad_rhs: f64,
    pub flux_lhs: f64,
    pub flux_rhs: f64,
}

pub fn crude_weaknorm_check(field: &CoefficientField, u: &DiscreteFunction, s: f64) -> Result<WeakNormReport> {
    let cube = &u.cube;
    let d = cube.d();
    let av = cell_averages(field, u)?;
    let nc = 2 * d + 1;
    let grads: Vec<f64> = av.values.chunks(nc).flat_map(|c| c[..d].to_vec()).collect();
    let fluxes: Vec<f64> = av.values.chunks(nc).flat_map(|c| c[d..2 * d].to_vec()).collect();
    let energy = av.values.chunks(nc).map(|c| c[2 * d]).sum::<f64>() / cube.volume() as f64;
    let spec = BesovSpec::ring(s, 2.0, 1.0);
    let (ms, mb) = coarse_maxima(field, cube)?;
    let pref = 3f64.powf(d as f64 + s) * energy.max(0.0).sqrt();
    let sum = |m: &[f64]| m.iter().enumerate().map(|(k, v)| 3f64.powf(s * k as f64) * v).sum::<f64>();
    Ok(WeakNormReport {
        grad_lhs: ring_negative_norm(&grads, d, cube, &spec)?,
        grad_rhs: pref * sum(&ms),
        flux_lhs: ring_negative_norm(&fluxes, d, cube, &spec)?,
        flux_rhs: pref * sum(&mb),
    })
}

/// Coarse-grained Poincaré: `[u − (u)]_{B^s_{2,∞}} ≤ C E^{1/2} Σ_k 3^{(1−s)k} max_z |s*^{-1}(z+□_k)|^{1/2}`,
/// with `u` represented by its cell means.
pub fn coarse_poincare_check(field: &CoefficientField, u: &DiscreteFunction, s: f64) -> Result<PoincareReport> {
    let cube = &u.cube;
    let d = cube.d();
    let means = nodal_cell_means(u);
    let lhs = besov_seminorm(&means, 1, cube, &BesovSpec::positive(s, 2.0, f64::INFINITY))?;
    let av = cell_averages(field, u)?;
    let energy = av.values.chunks(2 * d + 1).map(|c| c[2 * d]).sum::<f64>() / cube.volume() as f64;
    let (ms, _) = coarse_maxima(field, cube)?;
    let sum: f64 = ms.iter().enumerate().map(|(k, v)| 3f64.powf((1.0 - s) * k as f64) * v).sum();
    Ok(PoincareReport::new(lhs, energy.max(0.0).sqrt() * sum))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_admissibility() {
        assert!(BesovSpec::positive(0.5, 2.0, 2.0).check().is_ok());
        assert!(BesovSpec::positive(1.0, 2.0, f64::INFINITY).check().is_ok());
        assert!(BesovSpec::positive(1.0, 2.0, 2.0).check().is_err());
        assert!(BesovSpec::positive(0.0, 2.0, 3.0).check().is_err());
        assert!(BesovSpec::positive(0.5, 0.5, 2.0).check().is_err());
        assert!(BesovSpec::ring(1.0, 1.0, 1.0).check().is_ok());
        assert!(BesovSpec::ring(1.5, 1.0, 1.0).check().is_err());
        assert_eq!(BesovSpec::positive(0.5, 1.0, 2.0).conjugates(), (f64::INFINITY, 2.0));
    }

    #[test]
    fn constants_vanish() {
        let cube = TriadicCube::origin(2, 2);
        let f = vec![3.0; 81];
        assert_eq!(besov_seminorm(&f, 1, &cube, &BesovSpec::positive(0.5, 2.0, 2.0)).unwrap(), 0.0);
        let g = vec![0.0; 81];
        assert_eq!(ring_negative_norm(&g, 1, &cube, &BesovSpec::ring(0.5, 2.0, 2.0)).unwrap(), 0.0);
        assert!(besov_seminorm(&f[..80], 1, &cube, &BesovSpec::positive(0.5, 2.0, 2.0)).is_err());
    }

    #[test]
    fn ring_sees_only_the_finest_level_of_oscillating_fields() {
        // mean zero on every 3x3 block: only k = 0 contributes
        let cube = TriadicCube::origin(2, 2);
        let f: Vec<f64> = (0..81).map(|c| if (c / 9) % 3 == 0 && c % 3 == 0 { 8.0 } else { -1.0 }).collect();
        let spec = BesovSpec::ring(0.5, 2.0, 2.0);
        let r = ring_negative_norm(&f, 1, &cube, &spec).unwrap();
        let l2 = (f.iter().map(|x| x * x).sum::<f64>() / 81.0).sqrt();
        assert!((r - 3f64.powf(2.5) * l2).abs() < 1e-12);
    }
}
