//! Fractional Gaussian fields as sums of finite-range annular layers of one
//! discrete white noise.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use super::{Region, ScalarLattice};
use crate::error::{Error, Result};
use crate::rng::{component, substream};

/// Layer range and quadrature settings of a truncated FGF.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FgfParams {
    pub sigma: f64,
    #[serde(default)]
    pub n_min: i32,
    pub n_max: i32,
    #[serde(default = "default_digits")]
    pub kernel_digits: u32,
}

fn default_digits() -> u32 {
    3
}

impl FgfParams {
    pub fn new(sigma: f64, n_min: i32, n_max: i32) -> Self {
        FgfParams { sigma, n_min, n_max, kernel_digits: default_digits() }
    }

    pub fn check(&self, d: usize) -> std::result::Result<(), String> {
        if !(self.sigma > 0.0 && self.sigma < d as f64 / 2.0) {
            return Err(format!("fgf sigma must lie in (0, {})", d as f64 / 2.0));
        }
        if self.kernel_digits > 6 {
            return Err("kernel_digits must be at most 6".into());
        }
        Ok(())
    }
}

/// Prefactor `c(σ,d)` of `|z|^{-(d/2+σ)}` obtained from the heat-kernel
/// representation of `F_σ`.
pub fn fgf_c(sigma: f64, d: usize) -> f64 {
    let d = d as f64;
    let q = d / 2.0 + sigma;
    2f64.powf(q) * gamma(q / 2.0) / (gamma((d / 2.0 - sigma) / 2.0) * (4.0 * PI).powf(d / 2.0))
}

/// Covariance constant `C(σ,d) = 2^{2σ−d} π^{−d/2} Γ(σ) / Γ(d/2 − σ)`.
pub fn riesz_constant(sigma: f64, d: usize) -> f64 {
    let d = d as f64;
    2f64.powf(2.0 * sigma - d) * PI.powf(-d / 2.0) * gamma(sigma) / gamma(d / 2.0 - sigma)
}

const PHI_IN: f64 = 2.0 / 3.0;
const PHI_OUT: f64 = 4.0 / 3.0;

/// Radial cutoff: 1 on `r ≤ 2/3`, 0 on `r ≥ 4/3`, quintic smoothstep between.
pub fn phi_cutoff(r: f64) -> f64 {
    let t = ((r - PHI_IN) / (PHI_OUT - PHI_IN)).clamp(0.0, 1.0);
    1.0 - t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
}

/// `η_n(r) = φ(3^{-n} r) − φ(3^{1-n} r)`.
pub fn eta(n: i32, r: f64) -> f64 {
    let s = 3f64.powi(-n);
    phi_cutoff(s * r) - phi_cutoff(3.0 * s * r)
}

/// Largest deviation of `Σ_n η_n(r)` from 1 over the given radii.
pub fn partition_residual(radii: &[f64]) -> f64 {
    radii
        .iter()
        .map(|&r| {
            let c = r.log(3.0).floor() as i32;
            let s: f64 = (c - 3..=c + 3).map(|n| eta(n, r)).sum();
            (s - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

/// Kernel on offsets `[-R, R]^d`, row-major.
#[derive(Clone, Debug)]
pub struct FgfKernel {
    pub d: usize,
    pub radius: usize,
    pub values: Vec<f64>,
}

impl FgfKernel {
    pub fn zeros(d: usize, radius: usize) -> Self {
        FgfKernel { d, radius, values: vec![0.0; (2 * radius + 1).pow(d as u32)] }
    }

    pub fn width(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn offset(&self, mut idx: usize) -> Vec<i64> {
        let w = self.width();
        let mut z = vec![0i64; self.d];
        for a in (0..self.d).rev() {
            z[a] = (idx % w) as i64 - self.radius as i64;
            idx /= w;
        }
        z
    }

    fn index(&self, z: &[i64]) -> usize {
        let w = self.width() as i64;
        z.iter().fold(0i64, |acc, v| acc * w + v + self.radius as i64) as usize
    }

    /// Adds another kernel, enlarging the support if needed.
    pub fn accumulate(&mut self, other: &FgfKernel) {
        if other.radius > self.radius {
            let mut big = FgfKernel::zeros(self.d, other.radius);
            for i in 0..self.values.len() {
                let j = big.index(&self.offset(i));
                big.values[j] = self.values[i];
            }
            *self = big;
        }
        for i in 0..other.values.len() {
            let j = self.index(&other.offset(i));
            self.values[j] += other.values[i];
        }
    }

    pub fn sum_squares(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

fn layer_radius(n: i32) -> usize {
    if n <= 0 {
        2
    } else {
        (PHI_OUT * 3f64.powi(n)).ceil() as usize
    }
}

/// Gauss–Legendre 5-point nodes and weights on [−1, 1].
const GL5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// Composite Gauss–Legendre nodes on [−½, ½].
fn face_nodes() -> Vec<(f64, f64)> {
    let panels = 40;
    let h = 1.0 / panels as f64;
    let mut out = Vec::with_capacity(panels * 5);
    for p in 0..panels {
        let mid = -0.5 + (p as f64 + 0.5) * h;
        for (x, w) in GL5 {
            out.push((mid + 0.5 * h * x, 0.5 * h * w));
        }
    }
    out
}

/// `∫_{[−½,½]^d} |y|^{−q} dy` via the divergence theorem on the unit cube.
fn singular_cell_integral(d: usize, q: f64) -> f64 {
    let nodes = face_nodes();
    let face = match d {
        1 => 0.5f64.powf(-q),
        2 => nodes.iter().map(|(x, w)| w * (0.25 + x * x).powf(-q / 2.0)).sum(),
        3 => nodes
            .iter()
            .flat_map(|a| nodes.iter().map(move |b| (a, b)))
            .map(|((x, wx), (y, wy))| wx * wy * (0.25 + x * x + y * y).powf(-q / 2.0))
            .sum(),
        _ => panic!("unsupported dimension"),
    };
    d as f64 / (d as f64 - q) * face
}

/// Midpoint average of `f` over the unit cell centred at `z` with `m^d` points.
fn cell_average(z: &[i64], m: usize, f: impl Fn(f64) -> f64) -> f64 {
    let d = z.len();
    let total = m.pow(d as u32);
    let mut acc = 0.0;
    for t in 0..total {
        let mut rem = t;
        let mut r2 = 0.0;
        for a in 0..d {
            let i = rem % m;
            rem /= m;
            let x = z[a] as f64 - 0.5 + (i as f64 + 0.5) / m as f64;
            r2 += x * x;
        }
        acc += f(r2.sqrt());
    }
    acc / total as f64
}

/// Discrete kernel of layer `n`. Layers `n ≥ 1` are point evaluations of
/// `c η_n(|z|) |z|^{-(d/2+σ)}`; layer 0 collects every sub-unit scale
/// (profile `φ`) and is averaged over unit cells.
pub fn fgf_kernel(params: &FgfParams, n: i32, d: usize) -> FgfKernel {
    let c = fgf_c(params.sigma, d);
    let q = d as f64 / 2.0 + params.sigma;
    let radius = layer_radius(n);
    let mut k = FgfKernel::zeros(d, radius);
    if n >= 1 {
        for i in 0..k.values.len() {
            let z = k.offset(i);
            let r = z.iter().map(|v| (*v * *v) as f64).sum::<f64>().sqrt();
            if r > 0.0 {
                k.values[i] = c * eta(n, r) * r.powf(-q);
            }
        }
    } else {
        let m = 3usize.pow(params.kernel_digits.max(1));
        for i in 0..k.values.len() {
            let z = k.offset(i);
            k.values[i] = if z.iter().all(|v| *v == 0) {
                let tail = cell_average(&z, m, |r| if r < PHI_IN { 0.0 } else { (1.0 - phi_cutoff(r)) * r.powf(-q) });
                c * (singular_cell_integral(d, q) - tail)
            } else {
                c * cell_average(&z, m, |r| phi_cutoff(r) * r.powf(-q))
            };
        }
    }
    k
}

const NOISE_BLOCK: i64 = 8;

/// iid standard normals per unit cell. The value at a cell depends only on
/// `(seed, cell)`, not on the requested region.
pub fn sample_white_noise(region: &Region, seed: u64) -> ScalarLattice {
    let d = region.d();
    let mut out = ScalarLattice::zeros(region.clone());
    let blo: Vec<i64> = region.lo.iter().map(|v| v.div_euclid(NOISE_BLOCK)).collect();
    let bhi: Vec<i64> = region
        .lo
        .iter()
        .zip(&region.shape)
        .map(|(l, s)| (l + *s as i64 - 1).div_euclid(NOISE_BLOCK))
        .collect();
    let nb: Vec<usize> = blo.iter().zip(&bhi).map(|(l, h)| (h - l + 1) as usize).collect();
    let total: usize = nb.iter().product();
    let per = (NOISE_BLOCK as usize).pow(d as u32);
    for t in 0..total {
        let mut rem = t;
        let mut b = vec![0i64; d];
        for a in (0..d).rev() {
            b[a] = blo[a] + (rem % nb[a]) as i64;
            rem /= nb[a];
        }
        let mut rng = substream(seed, component::WHITE_NOISE, 0, &b);
        for j in 0..per {
            let v: f64 = StandardNormal.sample(&mut rng);
            let mut rem = j;
            let mut c = vec![0i64; d];
            for a in (0..d).rev() {
                c[a] = b[a] * NOISE_BLOCK + (rem as i64 % NOISE_BLOCK);
                rem /= NOISE_BLOCK as usize;
            }
            if let Some(i) = region.index(&c) {
                out.values[i] = v;
            }
        }
    }
    out
}

fn check_padding(w: &Region, out: &Region, radius: usize) -> Result<()> {
    if !w.contains_region(&out.dilate(radius)) {
        let have = (0..w.d())
            .map(|a| {
                let lo = out.lo[a] - w.lo[a];
                let hi = (w.lo[a] + w.shape[a] as i64) - (out.lo[a] + out.shape[a] as i64);
                lo.min(hi).max(0) as usize
            })
            .min()
            .unwrap_or(0);
        return Err(Error::PaddingTooSmall { need: radius, have });
    }
    Ok(())
}

/// `out(x) = Σ_z K(z) W(x+z)` by direct summation.
pub fn direct_convolve_valid(w: &ScalarLattice, k: &FgfKernel, out: &Region) -> Result<ScalarLattice> {
    check_padding(&w.region, out, k.radius)?;
    let mut res = ScalarLattice::zeros(out.clone());
    for i in 0..out.ncells() {
        let x = out.cell(i);
        let mut acc = 0.0;
        for (j, kv) in k.values.iter().enumerate() {
            if *kv == 0.0 {
                continue;
            }
            let z = k.offset(j);
            let y: Vec<i64> = x.iter().zip(&z).map(|(a, b)| a + b).collect();
            acc += kv * w.values[w.region.index(&y).unwrap()];
        }
        res.values[i] = acc;
    }
    Ok(res)
}

fn smooth_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

fn fft_nd(buf: &mut [Complex64], shape: &[usize], inverse: bool, planner: &mut FftPlanner<f64>) {
    let d = shape.len();
    let total: usize = shape.iter().product();
    for a in 0..d {
        let n = shape[a];
        let stride: usize = shape[a + 1..].iter().product();
        let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        let outer = total / (n * stride);
        for o in 0..outer {
            for s in 0..stride {
                let base = o * n * stride + s;
                for i in 0..n {
                    line[i] = buf[base + i * stride];
                }
                fft.process(&mut line);
                for i in 0..n {
                    buf[base + i * stride] = line[i];
                }
            }
        }
    }
}

/// Same result as [`direct_convolve_valid`], computed with FFTs.
pub fn fft_convolve_valid(w: &ScalarLattice, k: &FgfKernel, out: &Region) -> Result<ScalarLattice> {
    check_padding(&w.region, out, k.radius)?;
    let d = w.region.d();
    let shape: Vec<usize> = w.region.shape.iter().map(|&s| smooth_size(s)).collect();
    let total: usize = shape.iter().product();
    let lin = |c: &[usize]| c.iter().zip(&shape).fold(0usize, |acc, (v, n)| acc * n + v);
    let mut a = vec![Complex64::new(0.0, 0.0); total];
    for i in 0..w.region.ncells() {
        let c = w.region.cell(i);
        let local: Vec<usize> = c.iter().zip(&w.region.lo).map(|(x, l)| (x - l) as usize).collect();
        a[lin(&local)] = Complex64::new(w.values[i], 0.0);
    }
    let mut b = vec![Complex64::new(0.0, 0.0); total];
    for (j, kv) in k.values.iter().enumerate() {
        let z = k.offset(j);
        let idx: Vec<usize> = z.iter().zip(&shape).map(|(v, n)| (-v).rem_euclid(*n as i64) as usize).collect();
        b[lin(&idx)] += Complex64::new(*kv, 0.0);
    }
    let mut planner = FftPlanner::new();
    fft_nd(&mut a, &shape, false, &mut planner);
    fft_nd(&mut b, &shape, false, &mut planner);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    fft_nd(&mut a, &shape, true, &mut planner);
    let norm = 1.0 / total as f64;
    let mut res = ScalarLattice::zeros(out.clone());
    for i in 0..out.ncells() {
        let c = out.cell(i);
        let local: Vec<usize> = c.iter().zip(&w.region.lo).map(|(x, l)| (x - l) as usize).collect();
        res.values[i] = a[lin(&local)].re * norm;
    }
    debug_assert_eq!(d, out.d());
    Ok(res)
}

/// Layer `n` of the field driven by the noise `w`, evaluated on `out`.
pub fn fgf_layer(params: &FgfParams, n: i32, w: &ScalarLattice, out: &Region) -> Result<ScalarLattice> {
    let k = fgf_kernel(params, n, w.region.d());
    fft_convolve_valid(w, &k, out)
}

/// Sum of the layers `n_min..=n_max` (layer 0 carrying all sub-unit scales)
/// driven by one white noise, on `region`.
pub fn sample_fgf(params: &FgfParams, region: &Region, seed: u64) -> Result<ScalarLattice> {
    let d = region.d();
    params.check(d).map_err(Error::BadSpec)?;
    let lo = params.n_min.max(0);
    if lo > params.n_max {
        return Ok(ScalarLattice::zeros(region.clone()));
    }
    let mut total = fgf_kernel(params, lo, d);
    for n in lo + 1..=params.n_max {
        total.accumulate(&fgf_kernel(params, n, d));
    }
    let w = sample_white_noise(&region.dilate(total.radius), seed);
    fft_convolve_valid(&w, &total, region)
}

/// `Σ_x ψ(x) K(x − y)` on `psi.region` dilated by the kernel radius, so that
/// `Σ_x ψ(x) (K ⋆ W)(x) = Σ_y g(y) W(y)`.
fn adjoint_weights(psi: &ScalarLattice, k: &FgfKernel) -> Result<ScalarLattice> {
    let out = psi.region.dilate(k.radius);
    let big = out.dilate(k.radius);
    let mut padded = ScalarLattice::zeros(big);
    for (i, v) in psi.values.iter().enumerate() {
        let j = padded.region.index(&psi.region.cell(i)).unwrap();
        padded.values[j] = *v;
    }
    fft_convolve_valid(&padded, k, &out)
}

/// Flat-topped bump `(1 − r⁴)²₊` with `r² = Σ_a ((x_a − c_a)/ρ_a)²` at cell
/// centres, on the box of cells it touches.
pub fn bump(center: &[f64], radii: &[f64]) -> ScalarLattice {
    assert_eq!(center.len(), radii.len());
    let lo: Vec<i64> = center.iter().zip(radii).map(|(c, r)| (c - r).floor() as i64).collect();
    let shape: Vec<usize> =
        center.iter().zip(radii).zip(&lo).map(|((c, r), l)| ((c + r).ceil() as i64 - l) as usize).collect();
    let region = Region::new(lo, shape);
    let values = (0..region.ncells())
        .map(|i| {
            let r2: f64 = region.cell(i).iter().zip(center).zip(radii).map(|((x, c), r)| ((*x as f64 + 0.5 - c) / r).powi(2)).sum();
            (1.0 - r2 * r2).max(0.0).powi(2)
        })
        .collect();
    ScalarLattice { region, values }
}

/// Covariance of two bump functionals of the truncated field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpCovariance {
    pub samples: usize,
    pub empirical: f64,
    pub stderr: f64,
    /// `Σ_y g₁(y) g₂(y)`, the exact covariance of the discrete field.
    pub exact_discrete: f64,
    /// Exact variances `Σ g₁²`, `Σ g₂²`.
    pub exact_var: [f64; 2],
    /// `C(σ,d) Σ_x Σ_y ψ₁(x) ψ₂(y) |x − y|^{−2σ}` over cell centres.
    pub continuum: f64,
}

impl BumpCovariance {
    /// Standard error of the estimator predicted from the exact moments.
    pub fn predicted_stderr(&self) -> f64 {
        ((self.exact_var[0] * self.exact_var[1] + self.exact_discrete.powi(2)) / self.samples as f64).sqrt()
    }

    pub fn relative_error(&self) -> f64 {
        (self.empirical - self.continuum).abs() / self.continuum.abs()
    }
}

/// Monte Carlo covariance of `Σψ₁ζ` and `Σψ₂ζ`. Sample `i` uses the white
/// noise of seed `mix(seed, i)`, so each functional equals the one computed
/// from [`sample_fgf`] with that seed.
pub fn bump_covariance(params: &FgfParams, psi1: &ScalarLattice, psi2: &ScalarLattice, samples: usize, seed: u64) -> Result<BumpCovariance> {
    use rayon::prelude::*;
    let d = psi1.region.d();
    params.check(d).map_err(Error::BadSpec)?;
    if samples < 2 {
        return Err(Error::InvalidInput("need at least two samples".into()));
    }
    let mut k = fgf_kernel(params, params.n_min.max(0), d);
    for n in params.n_min.max(0) + 1..=params.n_max {
        k.accumulate(&fgf_kernel(params, n, d));
    }
    let g1 = adjoint_weights(psi1, &k)?;
    let g2 = adjoint_weights(psi2, &k)?;
    let exact_var = [g1.values.iter().map(|v| v * v).sum(), g2.values.iter().map(|v| v * v).sum()];
    let exact_discrete: f64 = (0..g1.region.ncells())
        .filter_map(|i| g2.get(&g1.region.cell(i)).map(|v| v * g1.values[i]))
        .sum();
    let pairs: Vec<(f64, f64)> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let s = crate::rng::mix(&[seed, i]);
            let dot = |g: &ScalarLattice| {
                let w = sample_white_noise(&g.region, s);
                g.values.iter().zip(&w.values).map(|(a, b)| a * b).sum::<f64>()
            };
            (dot(&g1), dot(&g2))
        })
        .collect();
    let n = samples as f64;
    let (m1, m2) = pairs.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let prods: Vec<f64> = pairs.iter().map(|(x, y)| (x - m1) * (y - m2)).collect();
    let empirical = prods.iter().sum::<f64>() / (n - 1.0);
    let var = prods.iter().map(|p| (p - empirical).powi(2)).sum::<f64>() / (n - 1.0);
    let c = riesz_constant(params.sigma, d);
    let mut continuum = 0.0;
    for i in 0..psi1.region.ncells() {
        let x = psi1.region.cell(i);
        for j in 0..psi2.region.ncells() {
            let y = psi2.region.cell(j);
            let r = x.iter().zip(&y).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>().sqrt();
            if r == 0.0 {
                return Err(Error::InvalidInput("bump supports overlap".into()));
            }
            continuum += psi1.values[i] * psi2.values[j] * r.powf(-2.0 * params.sigma);
        }
    }
    Ok(BumpCovariance { samples, empirical, stderr: (var / n).sqrt(), exact_discrete, exact_var, continuum: c * continuum })
}

/// Pointwise variance of layer `n`, scaled by `3^{2nσ}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerVariance {
    pub n: i32,
    pub samples: usize,
    pub scaled_empirical: f64,
    pub scaled_stderr: f64,
    /// `3^{2nσ} Σ_z K_n(z)²`.
    pub scaled_exact: f64,
}

pub fn layer_variance(params: &FgfParams, n: i32, d: usize, samples: usize, seed: u64) -> Result<LayerVariance> {
    use rayon::prelude::*;
    params.check(d).map_err(Error::BadSpec)?;
    if samples < 2 {
        return Err(Error::InvalidInput("need at least two samples".into()));
    }
    let k = fgf_kernel(params, n, d);
    let point = ScalarLattice { region: Region::new(vec![0; d], vec![1; d]), values: vec![1.0] };
    let g = adjoint_weights(&point, &k)?;
    let xs: Vec<f64> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let w = sample_white_noise(&g.region, crate::rng::mix(&[seed, n as u64, i]));
            g.values.iter().zip(&w.values).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    let m = samples as f64;
    let mean = xs.iter().sum::<f64>() / m;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    let scale = 3f64.powf(2.0 * n as f64 * params.sigma);
    Ok(LayerVariance {
        n,
        samples,
        scaled_empirical: var * scale,
        scaled_stderr: var * scale * (2.0 / (m - 1.0)).sqrt(),
        scaled_exact: k.sum_squares() * scale,
    })
}
