//! Monte Carlo renormalization flow of the expected coarse-grained matrices.
//!
//! For each level `n` the flow draws independent fields on `□_n`, averages
//! `A(□_n)` into `Ā(□_n)` and reports the ellipticity ratio `Θ_n` of the mean,
//! the trace ratio `Θ̂_n` and the normalized fluctuation of the samples.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cellsolve::{coarse_matrix, forget_field};
use crate::error::{Error, Result};
use crate::fields::{Region, SamplerSpec};
use crate::grids::{partition, TriadicCube};
use crate::matalg::{self, ellipticity_ratio, loewner_slack, spec_norm, BlockMatrix, Mat, SymMatrix};
use crate::rng::sample_seed;

/// Statistics of one level of the flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub level: u32,
    pub samples: usize,
    pub failed: usize,
    pub error: Option<String>,
    pub a_bar: BlockMatrix,
    /// Entrywise standard errors of `Ā`, row-major.
    pub a_bar_stderr: Vec<f64>,
    pub theta_n: f64,
    pub theta_n_stderr: f64,
    pub theta_hat: f64,
    pub theta_hat_stderr: f64,
    pub fluct: f64,
    pub fluct_stderr: f64,
}

/// `(1/d) tr(s̄*^{−1/2} s̄ s̄*^{−1/2})`.
pub fn theta_hat(a: &BlockMatrix) -> Result<f64> {
    let c = a.components()?;
    let r = c.s_star.inv_sqrt()?;
    let m = r.mat() * c.s.mat() * r.mat();
    Ok(m.trace() / a.d() as f64)
}

/// Point estimate of the homogenized symmetric part: the metric geometric
/// mean `s̄* # s̄` of the two bracketing components.
pub fn extracted_s(a: &BlockMatrix) -> Result<SymMatrix> {
    let c = a.components()?;
    matalg::metric_geomean(&c.s_star, &c.s)
}

/// `‖Ā^{−1/2}(A − Ā)Ā^{−1/2}‖²`.
fn normalized_deviation(inv_sqrt: &Mat, a: &BlockMatrix, mean: &BlockMatrix) -> f64 {
    spec_norm(&(inv_sqrt * (a.mat() - mean.mat()) * inv_sqrt)).powi(2)
}

fn mean_of(d: usize, mats: &[&BlockMatrix]) -> BlockMatrix {
    let n = 2 * d;
    let mut acc = Mat::zeros(n, n);
    for a in mats {
        acc += a.mat();
    }
    BlockMatrix::new(d, acc / mats.len() as f64)
}

fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Jackknife standard error of a statistic of the mean matrix.
fn jackknife(samples: &[&BlockMatrix], total: &Mat, stat: impl Fn(&BlockMatrix) -> Result<f64>) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Ok(0.0);
    }
    let d = samples[0].d();
    let loo: Vec<f64> = samples
        .iter()
        .map(|a| stat(&BlockMatrix::new(d, (total - a.mat()) / (n - 1) as f64)))
        .collect::<Result<_>>()?;
    let m = loo.iter().sum::<f64>() / n as f64;
    let ss = loo.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    Ok(((n - 1) as f64 / n as f64 * ss).sqrt())
}

impl FlowRecord {
    /// Builds a record from per-sample coarse matrices.
    pub fn from_samples(level: u32, samples: &[BlockMatrix]) -> Result<FlowRecord> {
        let refs: Vec<&BlockMatrix> = samples.iter().collect();
        Self::from_refs(level, &refs, 0, None)
    }

    fn from_refs(level: u32, samples: &[&BlockMatrix], failed: usize, error: Option<String>) -> Result<FlowRecord> {
        if samples.is_empty() {
            return Err(Error::InvalidInput(format!("no successful samples at level {level}")));
        }
        let d = samples[0].d();
        let n = samples.len();
        let a_bar = mean_of(d, samples);
        let total = a_bar.mat() * n as f64;
        let a_bar_stderr = (0..4 * d * d)
            .map(|e| mean_stderr(&samples.iter().map(|a| a.mat()[(e / (2 * d), e % (2 * d))]).collect::<Vec<_>>()).1)
            .collect();
        let theta_n = ellipticity_ratio(&a_bar)?.theta;
        let theta_n_stderr = jackknife(samples, &total, |m| Ok(ellipticity_ratio(m)?.theta))?;
        let th = theta_hat(&a_bar)?;
        let theta_hat_stderr = jackknife(samples, &total, theta_hat)?;
        let inv_sqrt = SymMatrix::new(a_bar.mat().clone()).inv_sqrt()?.into_mat();
        let devs: Vec<f64> = samples.iter().map(|a| normalized_deviation(&inv_sqrt, a, &a_bar)).collect();
        let (fluct, fluct_stderr) = mean_stderr(&devs);
        Ok(FlowRecord {
            level,
            samples: n,
            failed,
            error,
            a_bar,
            a_bar_stderr,
            theta_n,
            theta_n_stderr,
            theta_hat: th,
            theta_hat_stderr,
            fluct,
            fluct_stderr,
        })
    }

    /// Record of a known mean with no sampling error.
    pub fn exact(level: u32, a_bar: BlockMatrix) -> Result<FlowRecord> {
        Self::from_samples(level, &[a_bar])
    }

    /// Frobenius size of the entrywise standard errors.
    pub fn a_bar_stderr_norm(&self) -> f64 {
        self.a_bar_stderr.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Field box for a level: the cube itself, sampled directly on the whole-space lattice.
pub fn sample_region(d: usize, level: u32) -> Region {
    Region::from_cube(&TriadicCube::origin(d, level))
}

/// `A(□_n)` of the `index`-th sample.
pub fn sample_coarse_matrix(sampler: &SamplerSpec, d: usize, level: u32, seed: u64, index: u64) -> Result<BlockMatrix> {
    let cube = TriadicCube::origin(d, level);
    let field = sampler.sample(&Region::from_cube(&cube), sample_seed(seed, level, index))?;
    let a = coarse_matrix(&field, &cube);
    forget_field(&field);
    a
}

/// Monte Carlo flow over the given levels.
pub fn mc_flow(sampler: &SamplerSpec, d: usize, levels: &[u32], samples: usize, seed: u64) -> Result<Vec<FlowRecord>> {
    sampler.check(d).map_err(Error::InvalidInput)?;
    if samples == 0 {
        return Err(Error::InvalidInput("samples must be positive".into()));
    }
    levels
        .iter()
        .map(|&level| {
            let draws: Vec<Result<BlockMatrix>> = (0..samples as u64)
                .into_par_iter()
                .map(|i| sample_coarse_matrix(sampler, d, level, seed, i))
                .collect();
            let ok: Vec<&BlockMatrix> = draws.iter().filter_map(|r| r.as_ref().ok()).collect();
            let first_err = draws.iter().find_map(|r| r.as_ref().err()).map(|e| e.to_string());
            FlowRecord::from_refs(level, &ok, samples - ok.len(), first_err.clone())
                .map_err(|e| match first_err {
                    Some(msg) if ok.is_empty() => Error::InvalidInput(format!("level {level}: {msg}")),
                    _ => e,
                })
        })
        .collect()
}

/// Estimate of the additivity defect `E[J(□_k) − J(□_n)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectEstimate {
    pub mean: f64,
    pub stderr: f64,
    /// `½(−p,q)·(Ā(□_k) − Ā(□_n))(−p,q)` from the same samples.
    pub formula: f64,
    pub samples: usize,
}

pub fn additivity_defect(
    sampler: &SamplerSpec,
    d: usize,
    n: u32,
    k: u32,
    p: &[f64],
    q: &[f64],
    samples: usize,
    seed: u64,
) -> Result<DefectEstimate> {
    if k >= n {
        return Err(Error::BadPartition { level: n, k });
    }
    if p.len() != d || q.len() != d || samples == 0 {
        return Err(Error::InvalidInput("p, q must have length d and samples must be positive".into()));
    }
    let cube = TriadicCube::origin(d, n);
    let kids = partition(&cube, k)?;
    let draws: Vec<(BlockMatrix, BlockMatrix)> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let field = sampler.sample(&Region::from_cube(&cube), sample_seed(seed, n, i))?;
            let big = coarse_matrix(&field, &cube);
            let small: Result<Vec<BlockMatrix>> = kids.iter().map(|c| coarse_matrix(&field, c)).collect();
            forget_field(&field);
            let small = small?;
            Ok((big?, mean_of(d, &small.iter().collect::<Vec<_>>())))
        })
        .collect::<Result<_>>()?;
    let defects: Vec<f64> = draws.iter().map(|(big, small)| small.j(p, q) - big.j(p, q)).collect();
    let (mean, stderr) = mean_stderr(&defects);
    let a_n = mean_of(d, &draws.iter().map(|x| &x.0).collect::<Vec<_>>());
    let a_k = mean_of(d, &draws.iter().map(|x| &x.1).collect::<Vec<_>>());
    let mut x = p.iter().map(|v| -v).collect::<Vec<_>>();
    x.extend_from_slice(q);
    let diff = a_k.sub(&a_n);
    let formula = 0.5 * matalg::dot(&x, (diff.mat() * nalgebra::DVector::from_vec(x.clone())).as_slice());
    if mean < -3.0 * stderr - 1e-12 * (1.0 + mean.abs()) {
        return Err(Error::InequalityViolated(format!("additivity defect {mean:e} below −3·stderr ({stderr:e})")));
    }
    Ok(DefectEstimate { mean, stderr, formula, samples })
}

/// `‖Ā^{−1/2}(□_m)Ā(□_{m−l})Ā^{−1/2}(□_m) − I‖`.
pub fn scale_gap(coarse: &BlockMatrix, fine: &BlockMatrix) -> Result<f64> {
    let r = SymMatrix::new(coarse.mat().clone()).inv_sqrt()?.into_mat();
    let n = r.nrows();
    Ok(spec_norm(&(&r * fine.mat() * &r - Mat::identity(n, n))))
}

/// Smallest level `m` of the flow whose gap to level `m − l` is at most `delta1`.
pub fn pigeonhole_scan(flow: &[FlowRecord], l: u32, delta1: f64) -> Option<u32> {
    let mut sorted: Vec<&FlowRecord> = flow.iter().collect();
    sorted.sort_by_key(|r| r.level);
    sorted.iter().find_map(|r| {
        let fine = sorted.iter().find(|f| l <= r.level && f.level == r.level - l)?;
        match scale_gap(&r.a_bar, &fine.a_bar) {
            Ok(g) if g <= delta1 => Some(r.level),
            _ => None,
        }
    })
}

/// Estimate of the homogenized matrix from the last level of a flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomogenizedLimit {
    pub level: u32,
    pub a_bar: BlockMatrix,
    /// `4(Θ_m − 1)`; the bracket is `0 ≤ Ā(□_m) − Ā ≤ theta_gap·Ā`.
    pub theta_gap: f64,
    /// `Ā(□_m)/(1 + theta_gap)`, a lower estimate of the limit.
    pub lower: BlockMatrix,
    /// `s̄* # s̄` at the last level.
    pub s_estimate: SymMatrix,
    /// Spectral norm of the symmetric part of `k̄(□_m)`.
    pub k_sym_norm: f64,
    pub k_skew_norm: f64,
}

pub fn homogenized_limit(flow: &[FlowRecord]) -> Result<HomogenizedLimit> {
    let last = flow.iter().max_by_key(|r| r.level).ok_or_else(|| Error::InvalidInput("empty flow".into()))?;
    let theta_gap = (4.0 * (last.theta_n - 1.0)).max(0.0);
    let k = last.a_bar.components()?.k;
    Ok(HomogenizedLimit {
        level: last.level,
        a_bar: last.a_bar.clone(),
        theta_gap,
        lower: last.a_bar.scale(1.0 / (1.0 + theta_gap)),
        s_estimate: extracted_s(&last.a_bar)?,
        k_sym_norm: spec_norm(&((&k + k.transpose()) * 0.5)),
        k_skew_norm: spec_norm(&((&k - k.transpose()) * 0.5)),
    })
}

/// Outcome of the ordering checks along a flow.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonotonicityReport {
    /// Largest `(Θ_{n+1} − Θ_n)/σ` over consecutive pairs.
    pub theta_worst: f64,
    /// Largest violation of `Ā(□_m) ≤ Ā(□_n)` in units of σ.
    pub a_bar_worst: f64,
    pub s_worst: f64,
    pub s_star_worst: f64,
}

impl MonotonicityReport {
    pub fn holds(&self, z: f64) -> bool {
        [self.theta_worst, self.a_bar_worst, self.s_worst, self.s_star_worst].iter().all(|w| *w <= z)
    }
}

/// Orderings along consecutive levels, each normalized by the combined standard error.
pub fn flow_monotonicity(flow: &[FlowRecord]) -> Result<MonotonicityReport> {
    let mut sorted: Vec<&FlowRecord> = flow.iter().collect();
    sorted.sort_by_key(|r| r.level);
    let ratio = |excess: f64, sigma: f64| {
        // roundoff-sized excesses are ties even when the samples agree exactly
        if excess <= 0.0 {
            f64::NEG_INFINITY
        } else if excess <= 1e-9 {
            0.0
        } else if sigma > 0.0 {
            excess / sigma
        } else {
            f64::INFINITY
        }
    };
    let mut rep = MonotonicityReport {
        theta_worst: f64::NEG_INFINITY,
        a_bar_worst: f64::NEG_INFINITY,
        s_worst: f64::NEG_INFINITY,
        s_star_worst: f64::NEG_INFINITY,
    };
    for w in sorted.windows(2) {
        let (a, b) = (w[0], w[1]);
        let sig_t = a.theta_n_stderr.hypot(b.theta_n_stderr);
        rep.theta_worst = rep.theta_worst.max(ratio(b.theta_n - a.theta_n, sig_t));
        let sig_a = a.a_bar_stderr_norm().hypot(b.a_bar_stderr_norm());
        rep.a_bar_worst = rep.a_bar_worst.max(ratio(-loewner_slack(b.a_bar.mat(), a.a_bar.mat()), sig_a));
        let (ca, cb) = (a.a_bar.components()?, b.a_bar.components()?);
        rep.s_worst = rep.s_worst.max(ratio(-loewner_slack(cb.s.mat(), ca.s.mat()), sig_a));
        rep.s_star_worst = rep.s_star_worst.max(ratio(-loewner_slack(ca.s_star.mat(), cb.s_star.mat()), sig_a));
    }
    Ok(rep)
}

/// Mixing and integrability parameters of the coefficient law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingParams {
    pub gamma: f64,
    pub nu: f64,
    pub beta: f64,
    pub k_psi: f64,
    pub k_psi_s: f64,
    /// Constant in the length-scale exponent.
    pub c: f64,
    /// Small constant entering `κ`.
    pub c_kappa: f64,
}

impl MixingParams {
    pub fn check(&self, d: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.into()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.nu > self.gamma && self.nu <= d as f64 / 2.0) {
            return bad("nu must lie in (gamma, d/2]");
        }
        if !(0.0..1.0).contains(&self.beta) {
            return bad("beta must lie in [0, 1)");
        }
        if self.k_psi < 1.0 || self.k_psi_s < 1.0 {
            return bad("K_psi and K_psi_s must be at least 1");
        }
        if !(self.c > 0.0 && self.c_kappa > 0.0) {
            return bad("constants must be positive");
        }
        Ok(())
    }

    /// `α = (min(ν,1) − γ)(1 − β)`.
    pub fn alpha(&self) -> f64 {
        (self.nu.min(1.0) - self.gamma) * (1.0 - self.beta)
    }

    /// `μ = (ν − γ)(1 − β)`.
    pub fn mu(&self) -> f64 {
        (self.nu - self.gamma) * (1.0 - self.beta)
    }

    pub fn kappa(&self) -> f64 {
        let (g, n, b) = (self.gamma, self.nu, self.beta);
        let e = n - g;
        [self.c_kappa, (1.0 - g) / 2.0, e / (1.0 + e), (1.0 - b) * e / (b + (1.0 - b) * e)]
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }
}

/// `exp((C/α⁶)·log(Π K_Ψ K_{Ψ_S})·log²(1+Θ))`.
pub fn predicted_length_scale(params: &MixingParams, theta: f64, pi: f64) -> f64 {
    let a = params.alpha();
    (params.c / a.powi(6) * (pi * params.k_psi * params.k_psi_s).ln() * theta.ln_1p().powi(2)).exp()
}

/// Least-squares fit `log(Θ_n − 1) ≈ log(prefactor) − κ̂ n log 3`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaFit {
    pub kappa_hat: f64,
    pub prefactor: f64,
    pub points: usize,
}

pub fn theta_convergence_fit(flow: &[FlowRecord]) -> Result<ThetaFit> {
    let pts: Vec<(f64, f64)> = flow
        .iter()
        .filter(|r| r.theta_n - 1.0 > 3.0 * r.theta_n_stderr && r.theta_n - 1.0 > 1e-12)
        .map(|r| (r.level as f64 * 3f64.ln(), (r.theta_n - 1.0).ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::NoSignal);
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx = pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    if sxx == 0.0 {
        return Err(Error::NoSignal);
    }
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    Ok(ThetaFit { kappa_hat: -slope, prefactor: (my - slope * mx).exp(), points: pts.len() })
}
