//! Deterministic homogenization diagnostics for a single field sample.
//!
//! All quantities compare the heterogeneous field `a` with a constant
//! reference `a₀ = s₀ + k₀`: the multiscale error `E_s` built from coarse
//! matrices, harmonic approximation in both directions, the Dirichlet error
//! and a large-scale Lipschitz ratio.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::besov::{ring_negative_norm, BesovSpec};
use crate::cellsolve::{cell_averages, coarse_matrix, l2_distance, solve_dirichlet, DiscreteFunction};
use crate::error::{Error, Result};
use crate::fields::{CoefficientField, Region};
use crate::grids::{partition, pow3, TriadicCube};
use crate::matalg::{self, assemble_block, max_eig, BlockMatrix, Mat, SkewMatrix, SymMatrix};
use crate::renorm::extracted_s;
use crate::rng::{component, sample_seed, substream};

/// Constant reference coefficients `a₀ = s₀ + k₀`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub s0: SymMatrix,
    pub k0: SkewMatrix,
}

impl Reference {
    pub fn new(s0: SymMatrix, k0: SkewMatrix) -> Result<Self> {
        s0.check_pd()?;
        if s0.dim() != k0.dim() {
            return Err(Error::InvalidInput(format!("s0 has dimension {}, k0 has {}", s0.dim(), k0.dim())));
        }
        Ok(Reference { s0, k0 })
    }

    pub fn from_mat(a0: &Mat) -> Result<Self> {
        Self::new(SymMatrix::new((a0 + a0.transpose()) * 0.5), SkewMatrix::skew_part(a0))
    }

    pub fn isotropic(d: usize, c: f64) -> Result<Self> {
        Self::new(SymMatrix::scalar(d, c), SkewMatrix::zero(d))
    }

    /// Reference read off a flow estimate: `s̄* # s̄` and the skew part of `k̄`.
    pub fn from_block(a: &BlockMatrix) -> Result<Self> {
        Self::new(extracted_s(a)?, SkewMatrix::skew_part(&a.components()?.k))
    }

    pub fn d(&self) -> usize {
        self.s0.dim()
    }

    pub fn a0(&self) -> Mat {
        self.s0.mat() + self.k0.to_mat()
    }

    pub fn block(&self) -> Result<BlockMatrix> {
        assemble_block(&self.s0, &self.s0, &self.k0.to_mat())
    }

    /// Adds the same constant skew matrix to the reference.
    pub fn shifted(&self, h: &SkewMatrix) -> Self {
        Reference { s0: self.s0.clone(), k0: SkewMatrix::skew_part(&(self.k0.to_mat() + h.to_mat())) }
    }

    fn field(&self, region: Region) -> Result<CoefficientField> {
        CoefficientField::constant(region, &self.a0())
    }
}

/// `sup_{|e|≤1} (J(U, s₀^{−½}e, a₀ᵗs₀^{−½}e) + J*(U, s₀^{−½}e, a₀s₀^{−½}e))`, clipped at 0.
pub fn reference_defect(a: &BlockMatrix, r: &Reference) -> Result<f64> {
    let d = r.d();
    let si = r.s0.inv_sqrt()?.into_mat();
    let a0 = r.a0();
    let mut x1 = Mat::zeros(2 * d, d);
    x1.view_mut((0, 0), (d, d)).copy_from(&(-&si));
    x1.view_mut((d, 0), (d, d)).copy_from(&(a0.transpose() * &si));
    let mut x2 = Mat::zeros(2 * d, d);
    x2.view_mut((0, 0), (d, d)).copy_from(&si);
    x2.view_mut((d, 0), (d, d)).copy_from(&(&a0 * &si));
    // the two −p·q terms add up to −e·s₀^{−½}(a₀ + a₀ᵗ)s₀^{−½}e = −2|e|²
    let q = (x1.transpose() * a.mat() * &x1 + x2.transpose() * a.mat() * &x2) * 0.5 - Mat::identity(d, d) * 2.0;
    Ok(max_eig(&((&q + q.transpose()) * 0.5)).max(0.0))
}

/// The middle expression of the bridge sandwich:
/// `|s₀⁻¹(s − s*)| + |s₀^{−½}s*^{½} − s₀^{½}s*^{−½}|² + |s*^{−½}(k − k₀)s₀^{−½}|²`.
pub fn bridge_middle(a: &BlockMatrix, r: &Reference) -> Result<f64> {
    let c = a.components()?;
    let s0i = r.s0.inverse()?.into_mat();
    let s0ih = r.s0.inv_sqrt()?.into_mat();
    let s0h = r.s0.sqrt()?.into_mat();
    let ssh = c.s_star.sqrt()?.into_mat();
    let ssih = c.s_star.inv_sqrt()?.into_mat();
    let t1 = matalg::spec_norm(&(&s0i * (c.s.mat() - c.s_star.mat())));
    let t2 = matalg::spec_norm(&(&s0ih * &ssh - &s0h * &ssih)).powi(2);
    let t3 = matalg::spec_norm(&(&ssih * (&c.k - r.k0.to_mat()) * &s0ih)).powi(2);
    Ok(t1 + t2 + t3)
}

/// Per-level maxima over the subcubes of a cube, and the multiscale sums.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomogErrorProfile {
    pub cube: TriadicCube,
    pub s: f64,
    /// `max_z sup_e (J + J*)^{1/2}(z + □_k)` for `k = 0..=level`.
    pub level_max: Vec<f64>,
    /// `max_z ‖A₀^{−1/2}(A(z+□_k) − A₀)A₀^{−1/2}‖₊` for `k = 0..=level`.
    pub block_dev_max: Vec<f64>,
    /// `E_s` of the cube.
    pub e_s: f64,
    /// `E_1` of the cube.
    pub e_1: f64,
}

impl HomogErrorProfile {
    /// `t Σ_k 3^{t(k−n)} level_max[k]`.
    pub fn multiscale(&self, t: f64) -> f64 {
        let n = self.cube.level as f64;
        t * self.level_max.iter().enumerate().map(|(k, m)| 3f64.powf(t * (k as f64 - n)) * m).sum::<f64>()
    }
}

pub fn error_profile(field: &CoefficientField, r: &Reference, cube: &TriadicCube, s: f64) -> Result<HomogErrorProfile> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::BadSpec(format!("s must lie in (0, 1], got {s}")));
    }
    if r.d() != cube.d() {
        return Err(Error::InvalidInput(format!("reference of dimension {} on a {}-d cube", r.d(), cube.d())));
    }
    let b0 = r.block()?;
    let b0ih = SymMatrix::new(b0.mat().clone()).inv_sqrt()?.into_mat();
    let mut level_max = Vec::with_capacity(cube.level as usize + 1);
    let mut block_dev_max = Vec::with_capacity(cube.level as usize + 1);
    for k in 0..=cube.level {
        let (mut lm, mut bm) = (0f64, 0f64);
        for sub in partition(cube, k)? {
            let a = coarse_matrix(field, &sub)?;
            lm = lm.max(reference_defect(&a, r)?.sqrt());
            bm = bm.max(max_eig(&(&b0ih * (a.mat() - b0.mat()) * &b0ih)).max(0.0));
        }
        level_max.push(lm);
        block_dev_max.push(bm);
    }
    let mut p = HomogErrorProfile { cube: cube.clone(), s, level_max, block_dev_max, e_s: 0.0, e_1: 0.0 };
    p.e_s = p.multiscale(s);
    p.e_1 = p.multiscale(1.0);
    Ok(p)
}

/// `E_s(□_n) − avg_z E_s(z + □_k)` for the level-`k` subcubes.
pub fn profile_subadditivity_gap(field: &CoefficientField, r: &Reference, cube: &TriadicCube, k: u32, s: f64) -> Result<f64> {
    let whole = error_profile(field, r, cube, s)?.e_s;
    let kids = partition(cube, k)?;
    let mut avg = 0.0;
    for c in &kids {
        avg += error_profile(field, r, c, s)?.e_s;
    }
    Ok(whole - avg / kids.len() as f64)
}

// ---------------------------------------------------------------------------
// boundary value problems

/// Smooth random boundary data: a few low Fourier modes on the scale of `cube`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothData {
    pub center: Vec<f64>,
    pub scale: f64,
    pub modes: Vec<(Vec<f64>, f64, f64)>,
}

impl SmoothData {
    pub fn random(cube: &TriadicCube, seed: u64) -> Self {
        let d = cube.d();
        let mut rng = substream(seed, component::BOUNDARY, 0, &[]);
        let side = cube.side() as f64;
        let center = cube.base.iter().map(|b| *b as f64 + side / 2.0).collect();
        let modes = (0..4)
            .map(|_| {
                let k: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
                (k, rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(-1.0..1.0))
            })
            .collect();
        SmoothData { center, scale: side, modes }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let y: Vec<f64> = x.iter().zip(&self.center).map(|(a, c)| (a - c) / self.scale).collect();
        self.modes
            .iter()
            .map(|(k, ph, amp)| amp * (std::f64::consts::TAU * matalg::dot(k, &y) + ph).sin())
            .sum::<f64>()
            * self.scale
    }
}

/// `u₀(x) = c + b·(x − x₀) + ½(x − x₀)·H(x − x₀)` with `tr(s₀H) = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicPoly {
    pub origin: Vec<f64>,
    pub c: f64,
    pub b: Vec<f64>,
    pub h: SymMatrix,
}

impl HarmonicPoly {
    pub fn affine(origin: Vec<f64>, b: Vec<f64>) -> Self {
        let d = b.len();
        HarmonicPoly { origin, c: 0.0, b, h: SymMatrix::new(Mat::zeros(d, d)) }
    }

    pub fn check(&self, r: &Reference) -> Result<()> {
        let t = (r.s0.mat() * self.h.mat()).trace();
        if t.abs() > 1e-10 * (1.0 + matalg::spec_norm(self.h.mat()) * matalg::spec_norm(r.s0.mat())) {
            return Err(Error::BadSpec(format!("polynomial is not a0-harmonic: tr(s0 H) = {t}")));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let y: Vec<f64> = x.iter().zip(&self.origin).map(|(a, o)| a - o).collect();
        let hy = self.h.mat() * nalgebra::DVector::from_column_slice(&y);
        self.c + matalg::dot(&self.b, &y) + 0.5 * matalg::dot(&y, hy.as_slice())
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let y: Vec<f64> = x.iter().zip(&self.origin).map(|(a, o)| a - o).collect();
        let hy = self.h.mat() * nalgebra::DVector::from_column_slice(&y);
        self.b.iter().zip(hy.iter()).map(|(a, b)| a + b).collect()
    }
}

/// Energy density `⨍∇u·s∇u` over the cells of `sub` inside the cube of `u`.
fn energy_on(cells: &DiscreteFunction, sub: &TriadicCube) -> f64 {
    let d = cells.cube.d();
    let mut acc = 0.0;
    let mut count = 0usize;
    for c in sub.cells() {
        let local: Vec<usize> = c.iter().zip(&cells.cube.base).map(|(x, b)| (x - b) as usize).collect();
        acc += cells.cell(&local)[2 * d];
        count += 1;
    }
    acc / count as f64
}

/// L² distance of two nodal functions restricted to the cells of `sub`.
fn l2_on(u: &DiscreteFunction, v: &DiscreteFunction, sub: &TriadicCube) -> Result<f64> {
    let restrict = |w: &DiscreteFunction| -> DiscreteFunction {
        let m = w.cube.side() as usize + 1;
        let ms = sub.side() as usize + 1;
        let d = sub.d();
        let off: Vec<usize> = sub.base.iter().zip(&w.cube.base).map(|(a, b)| (a - b) as usize).collect();
        let mut values = Vec::with_capacity(ms.pow(d as u32));
        for i in 0..ms.pow(d as u32) {
            let mut rem = i;
            let mut idx = vec![0usize; d];
            for a in (0..d).rev() {
                idx[a] = rem % ms + off[a];
                rem /= ms;
            }
            values.push(w.values[idx.iter().fold(0, |acc, x| acc * m + x)]);
        }
        DiscreteFunction { cube: sub.clone(), layout: w.layout.clone(), values }
    };
    if !u.cube.contains_cube(sub) {
        return Err(Error::OutOfBox);
    }
    Ok(l2_distance(&restrict(u), Some(&restrict(v))))
}

/// Concentric cube of a smaller level.
pub fn concentric(cube: &TriadicCube, level: u32) -> Result<TriadicCube> {
    if level > cube.level {
        return Err(Error::BadPartition { level: cube.level, k: level });
    }
    let shift = (cube.side() - pow3(level)) / 2;
    Ok(TriadicCube::new(level, cube.base.iter().map(|b| b + shift).collect()))
}

/// Outcome of the forward harmonic approximation on one cube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardReport {
    /// `(λ₀^{½}/3^m)‖u − u_hom‖_{L²(□_m)} / ‖s^{½}∇u‖_{L²(□_m)}`.
    pub error_ratio: f64,
    /// Level `n` of the subcubes entering `max E₁`.
    pub inner_level: u32,
    /// `max_z E₁(z + □_n)` over the subcubes of the solved domain.
    pub e1_max: f64,
    /// `3^{−(m−n)} + e1_max`, the shape of the bound.
    pub bound_shape: f64,
}

/// Solves an `a`-harmonic `u` on the concentric cube of level `m + 1` around
/// `cube` with smooth random data, and the `a₀`-harmonic `u_hom` with the same
/// data, then compares them on `cube`.
pub fn harmonic_approx_forward(field: &CoefficientField, r: &Reference, cube: &TriadicCube, seed: u64) -> Result<ForwardReport> {
    let shift = pow3(cube.level);
    let outer = TriadicCube::new(cube.level + 1, cube.base.iter().map(|b| b - shift).collect());
    let data = SmoothData::random(&outer, seed);
    let g = |x: &[f64]| data.eval(x);
    let (u, _) = solve_dirichlet(field, &outer, &g, None)?;
    let hom = r.field(Region::from_cube(&outer))?;
    let (uh, _) = solve_dirichlet(&hom, &outer, &g, None)?;
    let energy = energy_on(&cell_averages(field, &u)?, cube);
    let lambda0 = r.s0.min_eig();
    let dist = l2_on(&u, &uh, cube)?;
    let error_ratio = if energy > 0.0 { lambda0.sqrt() / cube.side() as f64 * dist / energy.sqrt() } else { 0.0 };
    let inner_level = cube.level.saturating_sub(2);
    let mut e1_max = 0f64;
    for sub in partition(&outer, inner_level)? {
        e1_max = e1_max.max(error_profile(field, r, &sub, 1.0)?.e_1);
    }
    let bound_shape = 3f64.powi(-((cube.level - inner_level) as i32)) + e1_max;
    Ok(ForwardReport { error_ratio, inner_level, e1_max, bound_shape })
}

/// Solves the heterogeneous Dirichlet problem with data `u₀` and returns the
/// relative weak-norm deviation of gradients and fluxes:
/// `(‖∇u − ∇u₀‖ + ‖a∇u − a₀∇u₀‖) / (‖∇u₀‖ + ‖a₀∇u₀‖)` in `B̂^{−½}_{2,1}`.
pub fn harmonic_approx_reverse(field: &CoefficientField, r: &Reference, cube: &TriadicCube, u0: &HarmonicPoly) -> Result<f64> {
    u0.check(r)?;
    let d = cube.d();
    let (u, _) = solve_dirichlet(field, cube, &|x| u0.eval(x), None)?;
    let cells = cell_averages(field, &u)?;
    let a0 = r.a0();
    let nc = cube.volume();
    let (mut dg, mut df, mut g0, mut f0) =
        (Vec::with_capacity(nc * d), Vec::with_capacity(nc * d), Vec::with_capacity(nc * d), Vec::with_capacity(nc * d));
    let stride = 2 * d + 1;
    for (i, c) in cube.cells().iter().enumerate() {
        // the gradient of a quadratic is affine, so its cell mean is the value at the centre
        let x: Vec<f64> = c.iter().map(|v| *v as f64 + 0.5).collect();
        let gh = u0.grad(&x);
        let fh = &a0 * nalgebra::DVector::from_column_slice(&gh);
        let v = &cells.values[i * stride..(i + 1) * stride];
        for a in 0..d {
            dg.push(v[a] - gh[a]);
            df.push(v[d + a] - fh[a]);
            g0.push(gh[a]);
            f0.push(fh[a]);
        }
    }
    let spec = BesovSpec::ring(0.5, 2.0, 1.0);
    let num = ring_negative_norm(&dg, d, cube, &spec)? + ring_negative_norm(&df, d, cube, &spec)?;
    let den = ring_negative_norm(&g0, d, cube, &spec)? + ring_negative_norm(&f0, d, cube, &spec)?;
    if den == 0.0 {
        return Err(Error::BadSpec("reference polynomial has zero gradient".into()));
    }
    Ok(num / den)
}

/// Solves `−∇·a∇u = f`, `−∇·a₀∇u_hom = f` with `u = u_hom = g` on the
/// boundary and returns `‖u − u_hom‖ / (r‖∇g‖ + r²‖f‖)` with averaged L²
/// norms and `r` half the side.
pub fn dirichlet_error(
    field: &CoefficientField,
    r: &Reference,
    cube: &TriadicCube,
    g: &dyn Fn(&[f64]) -> f64,
    f: Option<&[f64]>,
) -> Result<f64> {
    let region = Region::from_cube(cube);
    let (u, _) = solve_dirichlet(field, cube, g, f)?;
    let (uh, _) = solve_dirichlet(&r.field(region.clone())?, cube, g, f)?;
    let num = l2_distance(&u, Some(&uh));
    // ‖∇g‖ of the nodal interpolant
    let grid_g = DiscreteFunction {
        cube: cube.clone(),
        layout: u.layout.clone(),
        values: node_positions(cube).iter().map(|x| g(x)).collect(),
    };
    let unit = CoefficientField::constant(region, &Mat::identity(cube.d(), cube.d()))?;
    let cells = cell_averages(&unit, &grid_g)?;
    let stride = 2 * cube.d() + 1;
    let grad_g = (cells.values.iter().skip(2 * cube.d()).step_by(stride).sum::<f64>() / cube.volume() as f64).sqrt();
    let f_norm = f.map_or(0.0, |f| (f.iter().map(|x| x * x).sum::<f64>() / f.len() as f64).sqrt());
    let rr = cube.side() as f64 / 2.0;
    let den = rr * grad_g + rr * rr * f_norm;
    if den == 0.0 {
        return Ok(num);
    }
    Ok(num / den)
}

fn node_positions(cube: &TriadicCube) -> Vec<Vec<f64>> {
    let d = cube.d();
    let m = cube.side() as usize + 1;
    (0..m.pow(d as u32))
        .map(|i| {
            let mut rem = i;
            let mut x = vec![0.0; d];
            for a in (0..d).rev() {
                x[a] = cube.base[a] as f64 + (rem % m) as f64;
                rem /= m;
            }
            x
        })
        .collect()
}

/// Interior-to-exterior energy ratios of an `a`-harmonic function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    /// `(r, ⨍_{⋄_r}∇u·s∇u / ⨍_{⋄_R}∇u·s∇u)` for each inner level.
    pub ratios: Vec<(u32, f64)>,
    pub max_ratio: f64,
}

/// Solves the `a`-harmonic function with data `g` on `cube` and compares the
/// energy density on concentric inner cubes with that of the whole cube.
pub fn lipschitz_diagnostic(
    field: &CoefficientField,
    cube: &TriadicCube,
    inner_levels: &[u32],
    g: &dyn Fn(&[f64]) -> f64,
) -> Result<LipschitzReport> {
    let (u, _) = solve_dirichlet(field, cube, g, None)?;
    let cells = cell_averages(field, &u)?;
    let total = energy_on(&cells, cube);
    if total <= 0.0 {
        return Err(Error::BadSpec("boundary data produce a constant solution".into()));
    }
    let mut ratios = Vec::with_capacity(inner_levels.len());
    for &lv in inner_levels {
        let inner = concentric(cube, lv)?;
        ratios.push((lv, energy_on(&cells, &inner) / total));
    }
    let max_ratio = ratios.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(LipschitzReport { ratios, max_ratio })
}

// ---------------------------------------------------------------------------
// calibration

/// Empirical constants for the recorded-threshold checks, produced by a
/// calibration run and stored as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub version: u32,
    pub sampler: String,
    pub level: u32,
    pub samples: usize,
    pub seed: u64,
    /// `max error_ratio / bound_shape` over the calibration samples.
    pub forward_c: f64,
    /// Largest Lipschitz ratio over the calibration samples.
    pub lipschitz_c: f64,
}

pub const CALIBRATION_VERSION: u32 = 1;

impl Calibration {
    pub fn from_json(s: &str) -> Result<Self> {
        let c: Calibration = serde_json::from_str(s).map_err(|e| Error::BadSpec(format!("calibration: {e}")))?;
        if c.version != CALIBRATION_VERSION {
            return Err(Error::BadSpec(format!("calibration version {} (expected {CALIBRATION_VERSION})", c.version)));
        }
        Ok(c)
    }

    /// `ratio ≤ (1 + slack)·C·bound_shape`.
    pub fn forward_holds(&self, rep: &ForwardReport, slack: f64) -> bool {
        rep.error_ratio <= (1.0 + slack) * self.forward_c * rep.bound_shape
    }

    pub fn lipschitz_holds(&self, rep: &LipschitzReport, slack: f64) -> bool {
        rep.max_ratio <= (1.0 + slack) * self.lipschitz_c
    }
}

/// Runs forward approximation and the Lipschitz diagnostic on `samples`
/// fields and records the largest normalized values.
pub fn calibrate(
    sampler: &crate::fields::SamplerSpec,
    r: &Reference,
    level: u32,
    samples: usize,
    seed: u64,
) -> Result<Calibration> {
    let d = r.d();
    if level < 1 {
        return Err(Error::BadSpec("calibration needs level ≥ 1".into()));
    }
    let cube = TriadicCube::new(level, vec![pow3(level); d]);
    let outer = TriadicCube::origin(d, level + 1);
    let (mut fc, mut lc) = (0f64, 0f64);
    for i in 0..samples as u64 {
        let field = sampler.sample(&Region::from_cube(&outer), sample_seed(seed, level, i))?;
        let fw = harmonic_approx_forward(&field, r, &cube, i)?;
        fc = fc.max(fw.error_ratio / fw.bound_shape);
        let data = SmoothData::random(&outer, i);
        let inner: Vec<u32> = (0..=level).collect();
        lc = lc.max(lipschitz_diagnostic(&field, &outer, &inner, &|x| data.eval(x))?.max_ratio);
        crate::cellsolve::forget_field(&field);
    }
    Ok(Calibration {
        version: CALIBRATION_VERSION,
        sampler: sampler.name().into(),
        level,
        samples,
        seed,
        forward_c: fc,
        lipschitz_c: lc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_reference_has_no_defect() {
        let m = Mat::from_row_slice(2, 2, &[2.0, 0.6, -0.6, 1.5]);
        let r = Reference::from_mat(&m).unwrap();
        let a = r.block().unwrap();
        assert!(reference_defect(&a, &r).unwrap() < 1e-12);
        assert!(bridge_middle(&a, &r).unwrap() < 1e-12);
    }

    #[test]
    fn concentric_cubes_are_centred() {
        let c = TriadicCube::new(3, vec![0, 27]);
        assert_eq!(concentric(&c, 1).unwrap(), TriadicCube::new(1, vec![12, 39]));
        assert_eq!(concentric(&c, 3).unwrap(), c);
    }
}
