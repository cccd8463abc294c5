//! Seedable coefficient-field samplers on lattice boxes.

mod fgf;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grids::{CellIndex, TriadicCube};
use crate::matalg::{self, Mat};
use crate::rng::{component, substream};

pub use fgf::{
    bump, bump_covariance, direct_convolve_valid, eta, fft_convolve_valid, fgf_c, fgf_kernel, fgf_layer, layer_variance, partition_residual,
    phi_cutoff, riesz_constant, sample_fgf, sample_white_noise, BumpCovariance, FgfKernel, FgfParams, LayerVariance,
};

/// Axis-aligned box of unit cells `lo + [0, shape)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    pub lo: Vec<i64>,
    pub shape: Vec<usize>,
}

impl Region {
    pub fn new(lo: Vec<i64>, shape: Vec<usize>) -> Self {
        assert_eq!(lo.len(), shape.len());
        Region { lo, shape }
    }

    pub fn from_cube(c: &TriadicCube) -> Self {
        Region { lo: c.base.clone(), shape: vec![c.side() as usize; c.d()] }
    }

    pub fn d(&self) -> usize {
        self.lo.len()
    }

    pub fn ncells(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn dilate(&self, r: usize) -> Self {
        Region {
            lo: self.lo.iter().map(|v| v - r as i64).collect(),
            shape: self.shape.iter().map(|s| s + 2 * r).collect(),
        }
    }

    /// Row-major linear index (last coordinate fastest).
    pub fn index(&self, c: &[i64]) -> Option<usize> {
        let mut idx = 0usize;
        for ((x, lo), n) in c.iter().zip(&self.lo).zip(&self.shape) {
            let o = x - lo;
            if o < 0 || o as usize >= *n {
                return None;
            }
            idx = idx * n + o as usize;
        }
        Some(idx)
    }

    pub fn cell(&self, mut idx: usize) -> CellIndex {
        let d = self.d();
        let mut c = vec![0i64; d];
        for a in (0..d).rev() {
            c[a] = self.lo[a] + (idx % self.shape[a]) as i64;
            idx /= self.shape[a];
        }
        c
    }

    pub fn contains_region(&self, other: &Region) -> bool {
        (0..self.d()).all(|a| {
            other.lo[a] >= self.lo[a] && other.lo[a] + other.shape[a] as i64 <= self.lo[a] + self.shape[a] as i64
        })
    }

    pub fn contains_cube(&self, c: &TriadicCube) -> bool {
        self.contains_region(&Region::from_cube(c))
    }
}

/// Generator name, parameters and seed of a sampled field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    pub generator: String,
    pub params: serde_json::Value,
    pub seed: u64,
}

impl FieldMeta {
    pub fn new(generator: &str, params: serde_json::Value, seed: u64) -> Self {
        FieldMeta { generator: generator.into(), params, seed }
    }
}

/// Cellwise constant d×d coefficient matrix field.
#[derive(Clone, Debug)]
pub struct CoefficientField {
    d: usize,
    region: Region,
    data: Arc<Vec<f64>>,
    id: u64,
    pub meta: FieldMeta,
}

static NEXT_FIELD_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_FIELD_ID.fetch_add(1, Ordering::Relaxed)
}

impl CoefficientField {
    /// Builds a field from row-major per-cell matrices, checking that every
    /// symmetric part is positive definite.
    pub fn new(region: Region, data: Vec<f64>, meta: FieldMeta) -> Result<Self> {
        let d = region.d();
        assert_eq!(data.len(), region.ncells() * d * d);
        let f = CoefficientField { d, region, data: Arc::new(data), id: next_id(), meta };
        f.check_spd()?;
        Ok(f)
    }

    pub fn from_fn(region: Region, meta: FieldMeta, f: impl Fn(&[i64]) -> Mat) -> Result<Self> {
        let d = region.d();
        let mut data = Vec::with_capacity(region.ncells() * d * d);
        for i in 0..region.ncells() {
            let m = f(&region.cell(i));
            for r in 0..d {
                for c in 0..d {
                    data.push(m[(r, c)]);
                }
            }
        }
        Self::new(region, data, meta)
    }

    pub fn constant(region: Region, m: &Mat) -> Result<Self> {
        let meta = FieldMeta::new("constant", serde_json::json!({ "matrix": mat_rows(m) }), 0);
        Self::from_fn(region, meta, |_| m.clone())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Process-unique identity used as a cache key; clones share it.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    /// Row-major entries of a(x) at linear cell index `i`.
    pub fn entries(&self, i: usize) -> &[f64] {
        let dd = self.d * self.d;
        &self.data[i * dd..(i + 1) * dd]
    }

    pub fn at(&self, c: &[i64]) -> Option<Mat> {
        self.region.index(c).map(|i| Mat::from_row_slice(self.d, self.d, self.entries(i)))
    }

    pub fn sym_at(&self, c: &[i64]) -> Option<Mat> {
        self.at(c).map(|m| (&m + m.transpose()) * 0.5)
    }

    pub fn skew_at(&self, c: &[i64]) -> Option<Mat> {
        self.at(c).map(|m| (&m - m.transpose()) * 0.5)
    }

    /// True when every cell matrix is symmetric.
    pub fn is_symmetric(&self) -> bool {
        let d = self.d;
        (0..self.region.ncells()).all(|i| {
            let e = self.entries(i);
            (0..d).all(|r| (0..d).all(|c| e[r * d + c] == e[c * d + r]))
        })
    }

    /// True when every cell matrix is a multiple of the identity.
    pub fn is_scalar(&self) -> bool {
        let d = self.d;
        (0..self.region.ncells()).all(|i| {
            let e = self.entries(i);
            (0..d).all(|r| (0..d).all(|c| if r == c { e[r * d + c] == e[0] } else { e[r * d + c] == 0.0 }))
        })
    }

    fn check_spd(&self) -> Result<()> {
        for i in 0..self.region.ncells() {
            let m = Mat::from_row_slice(self.d, self.d, self.entries(i));
            let s = (&m + m.transpose()) * 0.5;
            let ev = matalg::min_eig(&s);
            if !(ev > 0.0) || m.iter().any(|v| !v.is_finite()) {
                return Err(Error::DegenerateField { cell: self.region.cell(i), value: ev });
            }
        }
        Ok(())
    }

    /// Restriction of the field to a cube.
    pub fn torus_view(&self, cube: &TriadicCube) -> Result<CoefficientField> {
        let sub = Region::from_cube(cube);
        self.restrict(&sub)
    }

    pub fn restrict(&self, sub: &Region) -> Result<CoefficientField> {
        if sub.d() != self.d || !self.region.contains_region(sub) {
            return Err(Error::OutOfBox);
        }
        let dd = self.d * self.d;
        let mut data = Vec::with_capacity(sub.ncells() * dd);
        for i in 0..sub.ncells() {
            let j = self.region.index(&sub.cell(i)).unwrap();
            data.extend_from_slice(self.entries(j));
        }
        Ok(CoefficientField { d: self.d, region: sub.clone(), data: Arc::new(data), id: next_id(), meta: self.meta.clone() })
    }

    /// Adds a constant matrix to every cell.
    pub fn shifted(&self, m: &Mat) -> Result<CoefficientField> {
        let d = self.d;
        let mut data = self.data.as_ref().clone();
        for i in 0..self.region.ncells() {
            for r in 0..d {
                for c in 0..d {
                    data[i * d * d + r * d + c] += m[(r, c)];
                }
            }
        }
        CoefficientField::new(self.region.clone(), data, self.meta.clone())
    }
}

pub fn mat_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect()).collect()
}

pub fn mat_from_vecs(rows: &[Vec<f64>]) -> Mat {
    let n = rows.len();
    Mat::from_fn(n, n, |r, c| rows[r][c])
}

/// Per-cell scalar values on a region.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarLattice {
    pub region: Region,
    pub values: Vec<f64>,
}

impl ScalarLattice {
    pub fn zeros(region: Region) -> Self {
        let n = region.ncells();
        ScalarLattice { region, values: vec![0.0; n] }
    }

    pub fn get(&self, c: &[i64]) -> Option<f64> {
        self.region.index(c).map(|i| self.values[i])
    }

    pub fn restrict(&self, sub: &Region) -> Result<ScalarLattice> {
        if !self.region.contains_region(sub) {
            return Err(Error::OutOfBox);
        }
        let values = (0..sub.ncells()).map(|i| self.values[self.region.index(&sub.cell(i)).unwrap()]).collect();
        Ok(ScalarLattice { region: sub.clone(), values })
    }
}

/// How overlapping inclusions of one cloud combine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    /// Indicator of the union of balls: values stay in {1, Λ, λ, Λ+λ−1}.
    #[default]
    Indicator,
    /// Number of covering balls, as in a literal convolution with the point cloud.
    Count,
}

/// Parameters of the two-cloud Poisson inclusion field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoissonParams {
    pub rho1: f64,
    pub rho2: f64,
    pub lambda: f64,
    pub big_lambda: f64,
    #[serde(default = "one")]
    pub radius: f64,
    #[serde(default)]
    pub mode: OverlapMode,
}

fn one() -> f64 {
    1.0
}

/// Poisson points with intensity `rho` in the region dilated by `radius`.
pub fn poisson_points(rho: f64, region: &Region, radius: f64, seed: u64, cloud: i64) -> Vec<Vec<f64>> {
    let d = region.d();
    let pad = radius.ceil();
    let lo: Vec<f64> = region.lo.iter().map(|&v| v as f64 - pad).collect();
    let ext: Vec<f64> = region.shape.iter().map(|&s| s as f64 + 2.0 * pad).collect();
    let vol: f64 = ext.iter().product();
    let mut rng = substream(seed, component::POISSON, cloud, &region.lo);
    if rho <= 0.0 {
        return vec![];
    }
    let n = Poisson::new(rho * vol).unwrap().sample(&mut rng) as usize;
    (0..n).map(|_| (0..d).map(|a| lo[a] + ext[a] * rng.random::<f64>()).collect()).collect()
}

/// Per-cell count of points within distance `< radius` of the cell centre.
fn cover_counts(region: &Region, points: &[Vec<f64>], radius: f64) -> Vec<u32> {
    let d = region.d();
    let mut counts = vec![0u32; region.ncells()];
    let r = radius.ceil() as i64 + 1;
    for p in points {
        let base: Vec<i64> = p.iter().map(|v| v.floor() as i64 - r).collect();
        let side = 2 * r + 1;
        let m = side.pow(d as u32);
        for t in 0..m {
            let mut rem = t;
            let mut c = vec![0i64; d];
            for a in (0..d).rev() {
                c[a] = base[a] + rem % side;
                rem /= side;
            }
            if let Some(i) = region.index(&c) {
                let dist2: f64 = c.iter().zip(p).map(|(ci, pi)| (*ci as f64 + 0.5 - pi).powi(2)).sum();
                if dist2 < radius * radius {
                    counts[i] += 1;
                }
            }
        }
    }
    counts
}

/// Scalar field from explicit inclusion centres of the two clouds.
pub fn poisson_from_points(
    params: &PoissonParams,
    region: &Region,
    cloud1: &[Vec<f64>],
    cloud2: &[Vec<f64>],
    seed: u64,
) -> Result<CoefficientField> {
    let d = region.d();
    let c1 = cover_counts(region, cloud1, params.radius);
    let c2 = cover_counts(region, cloud2, params.radius);
    let mut data = Vec::with_capacity(region.ncells() * d * d);
    for i in 0..region.ncells() {
        let (n1, n2) = match params.mode {
            OverlapMode::Indicator => ((c1[i] > 0) as u32 as f64, (c2[i] > 0) as u32 as f64),
            OverlapMode::Count => (c1[i] as f64, c2[i] as f64),
        };
        let v = 1.0 + (params.big_lambda - 1.0) * n1 + (params.lambda - 1.0) * n2;
        for r in 0..d {
            for c in 0..d {
                data.push(if r == c { v } else { 0.0 });
            }
        }
    }
    let meta = FieldMeta::new("poisson", serde_json::to_value(params).unwrap(), seed);
    CoefficientField::new(region.clone(), data, meta)
}

pub fn sample_poisson_inclusions(params: &PoissonParams, region: &Region, seed: u64) -> Result<CoefficientField> {
    assert!(params.lambda > 0.0 && params.lambda <= 1.0 && params.big_lambda >= 1.0);
    let p1 = poisson_points(params.rho1, region, params.radius, seed, 1);
    let p2 = poisson_points(params.rho2, region, params.radius, seed, 2);
    poisson_from_points(params, region, &p1, &p2, seed)
}

/// Random laminate: iid stripes normal to `e₁` of the given width, taking
/// each of two values with probability ½, with a uniform random offset.
pub fn sample_laminate(values: [f64; 2], width: usize, region: &Region, seed: u64) -> Result<CoefficientField> {
    let d = region.d();
    let w = width.max(1) as i64;
    let offset = substream(seed, component::LAMINATE, -1, &[]).random_range(0..w);
    let meta = FieldMeta::new("laminate", serde_json::json!({ "values": values, "width": width }), seed);
    CoefficientField::from_fn(region.clone(), meta, |c| {
        let stripe = (c[0] + offset).div_euclid(w);
        let bit = substream(seed, component::LAMINATE, 0, &[stripe]).random::<bool>();
        Mat::identity(d, d) * values[bit as usize]
    })
}

/// Checkerboard with squares of side `square` cells and a uniform random
/// shift over one period.
pub fn sample_checkerboard(alpha: f64, beta: f64, square: usize, region: &Region, seed: u64) -> Result<CoefficientField> {
    let d = region.d();
    let b = square.max(1) as i64;
    let mut rng = substream(seed, component::CHECKER, 0, &[]);
    let shift: Vec<i64> = (0..d).map(|_| rng.random_range(0..2 * b)).collect();
    let meta = FieldMeta::new("checkerboard", serde_json::json!({ "alpha": alpha, "beta": beta, "square": square }), seed);
    CoefficientField::from_fn(region.clone(), meta, |c| {
        let parity: i64 = c.iter().zip(&shift).map(|(x, s)| (x + s).div_euclid(b)).sum();
        Mat::identity(d, d) * if parity.rem_euclid(2) == 0 { alpha } else { beta }
    })
}

/// `a = λI + k` with `k` skew and FGF-distributed entries.
pub fn sample_stream_field(lambda: f64, params: &FgfParams, region: &Region, seed: u64) -> Result<CoefficientField> {
    let d = region.d();
    if !(d == 2 || d == 3) {
        return Err(Error::Unsupported("stream fields need d = 2 or 3".into()));
    }
    let nent = d * (d - 1) / 2;
    let entries: Vec<ScalarLattice> =
        (0..nent).map(|e| sample_fgf(params, region, crate::rng::mix(&[seed, 100 + e as u64]))).collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(region.ncells() * d * d);
    for i in 0..region.ncells() {
        let mut m = Mat::identity(d, d) * lambda;
        let mut e = 0;
        for r in 0..d {
            for c in r + 1..d {
                m[(r, c)] += entries[e].values[i];
                m[(c, r)] -= entries[e].values[i];
                e += 1;
            }
        }
        data.extend(m.transpose().iter());
    }
    let meta = FieldMeta::new("stream", serde_json::json!({ "lambda": lambda, "fgf": params }), seed);
    CoefficientField::new(region.clone(), data, meta)
}

/// `a = exp(h g)` with `g` a matrix of independent FGF entries.
pub fn sample_lognormal(h: f64, params: &FgfParams, region: &Region, seed: u64) -> Result<CoefficientField> {
    let d = region.d();
    let entries: Vec<ScalarLattice> = (0..d * d)
        .map(|e| sample_fgf(params, region, crate::rng::mix(&[seed, 200 + e as u64])))
        .collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(region.ncells() * d * d);
    for i in 0..region.ncells() {
        let g = Mat::from_fn(d, d, |r, c| h * entries[r * d + c].values[i]);
        let m = expm(&g);
        data.extend(m.transpose().iter());
    }
    let meta = FieldMeta::new("lognormal", serde_json::json!({ "h": h, "fgf": params }), seed);
    CoefficientField::new(region.clone(), data, meta)
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn expm(a: &Mat) -> Mat {
    let n = a.nrows();
    let norm = a.iter().map(|v| v.abs()).sum::<f64>();
    let mut s = 0;
    while norm / 2f64.powi(s) > 0.5 {
        s += 1;
    }
    let b = a / 2f64.powi(s);
    let mut term = Mat::identity(n, n);
    let mut sum = Mat::identity(n, n);
    for k in 1..30 {
        term = &term * &b / k as f64;
        sum += &term;
        if term.iter().all(|v| v.abs() < 1e-18) {
            break;
        }
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// Sampler description shared by the experiment drivers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplerSpec {
    Constant { matrix: Vec<Vec<f64>> },
    Poisson(PoissonParams),
    Laminate { values: [f64; 2], #[serde(default = "one_usize")] width: usize },
    Checkerboard { alpha: f64, beta: f64, #[serde(default = "three")] square: usize },
    Stream { lambda: f64, fgf: FgfParams },
    Lognormal { h: f64, fgf: FgfParams },
}

fn one_usize() -> usize {
    1
}
fn three() -> usize {
    3
}

impl SamplerSpec {
    pub const KINDS: [&'static str; 6] = ["constant", "poisson", "laminate", "checkerboard", "stream", "lognormal"];

    pub fn sample(&self, region: &Region, seed: u64) -> Result<CoefficientField> {
        match self {
            SamplerSpec::Constant { matrix } => CoefficientField::constant(region.clone(), &mat_from_vecs(matrix)),
            SamplerSpec::Poisson(p) => sample_poisson_inclusions(p, region, seed),
            SamplerSpec::Laminate { values, width } => sample_laminate(*values, *width, region, seed),
            SamplerSpec::Checkerboard { alpha, beta, square } => sample_checkerboard(*alpha, *beta, *square, region, seed),
            SamplerSpec::Stream { lambda, fgf } => sample_stream_field(*lambda, fgf, region, seed),
            SamplerSpec::Lognormal { h, fgf } => sample_lognormal(*h, fgf, region, seed),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SamplerSpec::Constant { .. } => "constant",
            SamplerSpec::Poisson(_) => "poisson",
            SamplerSpec::Laminate { .. } => "laminate",
            SamplerSpec::Checkerboard { .. } => "checkerboard",
            SamplerSpec::Stream { .. } => "stream",
            SamplerSpec::Lognormal { .. } => "lognormal",
        }
    }

    /// Fails on parameter combinations the samplers reject.
    pub fn check(&self, d: usize) -> std::result::Result<(), String> {
        match self {
            SamplerSpec::Constant { matrix } => {
                if matrix.len() != d || matrix.iter().any(|r| r.len() != d) {
                    return Err(format!("constant matrix must be {d}x{d}"));
                }
                let m = mat_from_vecs(matrix);
                if matalg::min_eig(&((&m + m.transpose()) * 0.5)) <= 0.0 {
                    return Err("constant matrix must have a positive definite symmetric part".into());
                }
            }
            SamplerSpec::Poisson(p) => {
                if !(p.lambda > 0.0 && p.lambda <= 1.0) || p.big_lambda < 1.0 || p.rho1 < 0.0 || p.rho2 < 0.0 {
                    return Err("poisson requires 0 < lambda <= 1 <= big_lambda and rho >= 0".into());
                }
            }
            SamplerSpec::Laminate { values, .. } => {
                if values.iter().any(|v| *v <= 0.0) {
                    return Err("laminate values must be positive".into());
                }
            }
            SamplerSpec::Checkerboard { alpha, beta, .. } => {
                if *alpha <= 0.0 || *beta <= 0.0 {
                    return Err("checkerboard values must be positive".into());
                }
            }
            SamplerSpec::Stream { lambda, fgf } => {
                if *lambda <= 0.0 || !(d == 2 || d == 3) {
                    return Err("stream needs lambda > 0 and d in {2, 3}".into());
                }
                fgf.check(d)?;
            }
            SamplerSpec::Lognormal { h, fgf } => {
                if *h <= 0.0 {
                    return Err("lognormal needs h > 0".into());
                }
                fgf.check(d)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region2(n: usize) -> Region {
        Region::new(vec![0, 0], vec![n, n])
    }

    #[test]
    fn zero_intensity_is_identity() {
        let p = PoissonParams { rho1: 0.0, rho2: 0.0, lambda: 0.1, big_lambda: 10.0, radius: 1.0, mode: OverlapMode::Indicator };
        let f = sample_poisson_inclusions(&p, &region2(9), 3).unwrap();
        assert!(f.raw().chunks(4).all(|c| c == [1.0, 0.0, 0.0, 1.0]));
    }

    #[test]
    fn single_point_marks_unit_ball() {
        let p = PoissonParams { rho1: 1.0, rho2: 0.0, lambda: 0.1, big_lambda: 10.0, radius: 1.0, mode: OverlapMode::Indicator };
        let r = Region::new(vec![-3, -3], vec![6, 6]);
        let f = poisson_from_points(&p, &r, &[vec![0.0, 0.0]], &[], 0).unwrap();
        for i in 0..r.ncells() {
            let c = r.cell(i);
            let dist = ((c[0] as f64 + 0.5).powi(2) + (c[1] as f64 + 0.5).powi(2)).sqrt();
            let want = if dist < 1.0 { 10.0 } else { 1.0 };
            assert_eq!(f.entries(i)[0], want);
        }
    }

    #[test]
    fn count_mode_can_degenerate() {
        let p = PoissonParams { rho1: 0.0, rho2: 1.0, lambda: 0.1, big_lambda: 10.0, radius: 1.0, mode: OverlapMode::Count };
        let r = Region::new(vec![-2, -2], vec![4, 4]);
        let e = poisson_from_points(&p, &r, &[], &[vec![0.1, 0.1], vec![-0.1, 0.1]], 0);
        assert!(matches!(e, Err(Error::DegenerateField { .. })));
    }

    #[test]
    fn expm_of_diagonal_and_skew() {
        let g = Mat::from_diagonal(&nalgebra::DVector::from_column_slice(&[0.3, -1.1]));
        let e = expm(&g);
        assert!((e[(0, 0)] - 0.3f64.exp()).abs() < 1e-14 && (e[(1, 1)] - (-1.1f64).exp()).abs() < 1e-14);
        let th = 2.5;
        let k = matalg::mat_from_rows(&[&[0.0, th], &[-th, 0.0]]);
        let r = expm(&k);
        assert!((r[(0, 0)] - th.cos()).abs() < 1e-13 && (r[(0, 1)] - th.sin()).abs() < 1e-13);
    }

    #[test]
    fn checkerboard_values_alternate() {
        let f = sample_checkerboard(1.0, 4.0, 3, &region2(12), 11).unwrap();
        let mut n1 = 0;
        for i in 0..144 {
            if f.entries(i)[0] == 1.0 {
                n1 += 1;
            }
        }
        assert_eq!(n1, 72);
    }

    #[test]
    fn laminate_depends_on_first_coordinate_only() {
        let f = sample_laminate([1.0, 4.0], 1, &region2(27), 5).unwrap();
        for x in 0..27 {
            let v = f.at(&[x, 0]).unwrap()[(0, 0)];
            for y in 1..27 {
                assert_eq!(f.at(&[x, y]).unwrap()[(0, 0)], v);
            }
        }
    }

    #[test]
    fn restriction_matches_parent() {
        let f = sample_checkerboard(1.0, 4.0, 2, &region2(9), 1).unwrap();
        let v = f.torus_view(&TriadicCube::new(1, vec![3, 3])).unwrap();
        for i in 0..9 {
            let c = v.region().cell(i);
            assert_eq!(v.at(&c), f.at(&c));
        }
        assert!(f.torus_view(&TriadicCube::new(2, vec![3, 3])).is_err());
    }
}
