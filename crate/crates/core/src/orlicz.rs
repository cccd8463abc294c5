//! Orlicz tail functions, the O_Ψ calculus constants and closed-form
//! concentration bounds for sums of independent centered variables.
//!
//! `X = O_Ψ(a)` means `P[X > t a] ≤ 1/Ψ(t)` for every `t ≥ 1`. All tail
//! functions are stored through `log Ψ` so that fast growing families can be
//! evaluated far out without overflow.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::rng::{component, substream};

/// Family tag of an [`OrliczFunction`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Family {
    GammaSigma(f64),
    PsiSigma(f64),
    Custom,
}

/// Increasing tail function `Ψ ≥ 1` with growth constant `K`,
/// `tΨ(t) ≤ Ψ(Kt)` for `t ≥ 1`.
#[derive(Clone)]
pub struct OrliczFunction {
    log_psi: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub k: f64,
    pub family: Family,
}

impl fmt::Debug for OrliczFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OrliczFunction").field("family", &self.family).field("k", &self.k).finish()
    }
}

/// Geometric grid on `[lo, hi]` with `per_decade` points per decade, both
/// endpoints included.
pub fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    if hi <= lo {
        return vec![lo];
    }
    let n = ((hi / lo).log10() * per_decade as f64).ceil().max(1.0) as usize;
    let r = (hi / lo).ln() / n as f64;
    let mut g: Vec<f64> = (0..n).map(|i| lo * (r * i as f64).exp()).collect();
    g.push(hi);
    g
}

/// Points per decade of the grids on which "for all t" statements are checked.
pub const GRID_PER_DECADE: usize = 200;

/// `Γ_σ(t) = exp(t^σ)`.
pub fn gamma_sigma(sigma: f64) -> OrliczFunction {
    assert!(sigma > 0.0, "sigma must be positive");
    let k = if sigma < 1.0 { ((sigma + 1.0) / sigma).powf(1.0 / sigma) } else { 2.0 };
    OrliczFunction { log_psi: Arc::new(move |t: f64| t.powf(sigma)), k, family: Family::GammaSigma(sigma) }
}

/// `Ψ_σ(t) = exp(σ⁻² log²(1+σt))`, the log-normal tail.
pub fn psi_sigma(sigma: f64) -> OrliczFunction {
    assert!(sigma >= 1.0, "sigma must be at least 1");
    let k = 2.0 * (2.0 * sigma * sigma).exp();
    OrliczFunction {
        log_psi: Arc::new(move |t: f64| (sigma * t).ln_1p().powi(2) / (sigma * sigma)),
        k,
        family: Family::PsiSigma(sigma),
    }
}

impl OrliczFunction {
    /// A user supplied tail function given through `log Ψ`; the growth
    /// condition is checked on the standard grid.
    pub fn custom(log_psi: impl Fn(f64) -> f64 + Send + Sync + 'static, k: f64) -> Result<Self> {
        let f = OrliczFunction { log_psi: Arc::new(log_psi), k, family: Family::Custom };
        f.growth_check()?;
        Ok(f)
    }

    pub fn log_psi(&self, t: f64) -> f64 {
        (self.log_psi)(t)
    }

    pub fn psi(&self, t: f64) -> f64 {
        self.log_psi(t).exp()
    }

    /// `1/Ψ(t)` without overflow.
    pub fn inv_psi(&self, t: f64) -> f64 {
        (-self.log_psi(t)).exp()
    }

    /// Smallest slack of `log Ψ(Kt) − log Ψ(t) − log t` on the grid over
    /// `[1, 10⁶]`; fails with the worst point if negative.
    pub fn growth_check(&self) -> Result<f64> {
        worst(log_grid(1.0, 1e6, GRID_PER_DECADE), |t| self.log_psi(self.k * t) - self.log_psi(t) - t.ln())
    }

    /// Smallest slack of the absorption bound `t^p/Ψ(t) ≤ 1/Ψ(K^{-4⌈p⌉}t)`
    /// on six decades starting at `K^{4⌈p⌉}`.
    pub fn absorption_check(&self, p: f64) -> Result<f64> {
        let s = self.k.powf(4.0 * p.ceil());
        worst(log_grid(s, s * 1e6, GRID_PER_DECADE), |t| self.log_psi(t) - p * t.ln() - self.log_psi(t / s))
    }

    /// Smallest slack of `log Ψ(t) ≥ log²t / (9 log K)` on six decades from `K²`.
    pub fn lower_growth_check(&self) -> Result<f64> {
        let lk = self.k.ln();
        let s = self.k * self.k;
        worst(log_grid(s, s * 1e6, GRID_PER_DECADE), |t| self.log_psi(t) - t.ln().powi(2) / (9.0 * lk))
    }

    /// `C_Ψ = ∫₁^∞ t/Ψ(t) dt`.
    ///
    /// The integral is taken in `u = log t` by adaptive Simpson up to a cut
    /// where the lower growth bound `Ψ(t) ≥ exp(log²t/(9 log K))` makes the
    /// remaining tail smaller than the tolerance.
    pub fn c_psi(&self) -> f64 {
        let c = 9.0 * self.k.ln();
        // ∫_U^∞ exp(2u − u²/c) du
        let tail = |u: f64| (c + 0.5 * c.ln() + 0.5 * std::f64::consts::PI.ln() - 2f64.ln()).exp() * erfc((u - c) / c.sqrt());
        let mut upper = (2.0 * self.k.ln()).max(1.0);
        while tail(upper) > 1e-12 {
            upper *= 1.25;
        }
        let f = |u: f64| (2.0 * u - self.log_psi(u.exp())).exp();
        adaptive_simpson(&f, 0.0, upper, 1e-10, 256)
    }
}

fn worst(grid: Vec<f64>, slack: impl Fn(f64) -> f64) -> Result<f64> {
    let (t, s) = grid.into_iter().map(|t| (t, slack(t))).fold((f64::NAN, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    // relative rounding allowance for slacks computed from large logarithms
    if s < -1e-12 {
        return Err(Error::ConstraintViolated { t, excess: -s });
    }
    Ok(s)
}

/// Adaptive Simpson rule on `[a, b]`, starting from `panels` equal panels.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, panels: usize) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let (x0, x1) = (a + h * i as f64, a + h * (i + 1) as f64);
            let (f0, fm, f1) = (f(x0), f(0.5 * (x0 + x1)), f(x1));
            rec(f, x0, x1, f0, fm, f1, h / 6.0 * (f0 + 4.0 * fm + f1), tol / panels as f64, 40)
        })
        .sum()
}

/// Bound on `E[X^p]` for `X = O_Ψ(a)`: `a^p(1 + 2p K^{⌈p(p+1)/2⌉}(1 + log K))`.
pub fn moment_bound(psi: &OrliczFunction, a: f64, p: f64) -> f64 {
    let k = psi.k;
    a.powf(p) * (1.0 + 2.0 * p * k.powf((0.5 * p * (p + 1.0)).ceil()) * (1.0 + k.ln()))
}

/// Generalized triangle constant: `Σ X_k = O_Ψ(4K⁷ Σ a_k)`.
pub fn osum_bound(psi: &OrliczFunction, a: &[f64]) -> f64 {
    4.0 * psi.k.powi(7) * a.iter().sum::<f64>()
}

/// Tail bound for a sum of `m` independent centered `O_{Γ_σ}(1)` variables,
/// `σ ∈ [1, 2]`, at level `t ≥ 1`.
pub fn conc_exp_bound(sigma: f64, m: usize, t: f64) -> f64 {
    assert!((1.0..=2.0).contains(&sigma), "sigma must lie in [1, 2]");
    let gauss = (-t * t / (40.0 * m as f64)).exp();
    let other = if sigma == 1.0 {
        (-0.5 * t).exp()
    } else {
        128.0 / (sigma - 1.0).powi(3) * (-t.powf(sigma) / (2.0 * sigma)).exp()
    };
    gauss.max(other).min(1.0)
}

/// Checks `λt ≤ log Ψ(t) − 4 log t + log M` on a grid over `[1, L]`.
pub fn check_lambda_constraint(psi: &OrliczFunction, lambda: f64, l: f64, big_m: f64) -> Result<f64> {
    let lm = big_m.ln();
    worst(log_grid(1.0, l, GRID_PER_DECADE), |t| psi.log_psi(t) - 4.0 * t.ln() + lm - lambda * t)
}

/// `m/Ψ(L) + exp(−λt + λ²m(2 + M + C_Ψ))`, after checking the constraint
/// linking `λ`, `L` and `M`.
pub fn conc_psi_bound(psi: &OrliczFunction, m: usize, t: f64, lambda: f64, l: f64, big_m: f64) -> Result<f64> {
    conc_psi_bound_with_constant(psi, m, t, lambda, l, big_m, 2.0 + big_m + psi.c_psi())
}

/// As [`conc_psi_bound`] with `2 + M + C_Ψ` replaced by a constant `a` that
/// dominates it.
pub fn conc_psi_bound_with_constant(
    psi: &OrliczFunction,
    m: usize,
    t: f64,
    lambda: f64,
    l: f64,
    big_m: f64,
    a: f64,
) -> Result<f64> {
    if !(lambda > 0.0 && lambda <= 1.0) || !(l >= 1.0) || !(big_m >= 0.0) {
        return Err(Error::InvalidInput(format!("lambda = {lambda}, L = {l}, M = {big_m}")));
    }
    check_lambda_constraint(psi, lambda, l, big_m)?;
    let m = m as f64;
    Ok(m * psi.inv_psi(l) + (-lambda * t + lambda * lambda * m * a).exp())
}

/// The parameters through which a corollary instantiates the general bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Specialization {
    pub lambda: f64,
    pub l: f64,
    pub big_m: f64,
    /// Constant used in place of `2 + M + C_Ψ`.
    pub constant: f64,
    /// `m/Ψ(L) + exp(−λt + λ² m constant)`.
    pub bound: f64,
}

fn specialization(psi: &OrliczFunction, m: usize, t: f64, lambda: f64, l: f64, big_m: f64, constant: f64) -> Specialization {
    let mf = m as f64;
    let bound = mf * psi.inv_psi(l) + (-lambda * t + lambda * lambda * mf * constant).exp();
    Specialization { lambda, l, big_m, constant, bound }
}

fn gamma_sigma_constants(sigma: f64) -> (f64, f64) {
    let base = 8f64.powf(2.0 / sigma) * gamma(2.0 / sigma);
    let big_m = base.powi(4);
    (big_m, 2.0 * (big_m + 1.0))
}

/// Stretched exponential case `Γ_σ`, `σ ∈ (0, 1)`, `t ≥ 1`:
/// `M = (8^{2/σ}Γ(2/σ))⁴`, `A = 2(M + 1)`, `λ = min(t/(2Am), t^{σ−1}/2)`,
/// `L = (2λ)^{−1/(1−σ)}`.
pub fn gamma_sigma_specialization(sigma: f64, m: usize, t: f64) -> Specialization {
    assert!(sigma > 0.0 && sigma < 1.0);
    let (big_m, a) = gamma_sigma_constants(sigma);
    let lambda = (t / (2.0 * a * m as f64)).min(0.5 * t.powf(sigma - 1.0));
    let l = (2.0 * lambda).powf(-1.0 / (1.0 - sigma));
    specialization(&gamma_sigma(sigma), m, t, lambda, l, big_m, a)
}

/// Closed form of the stretched exponential concentration bound,
/// `m exp(−t^σ) + max(exp(−t²/(4Am)), exp(−t^σ/4))`.
pub fn gamma_sigma_concentration(sigma: f64, m: usize, t: f64) -> f64 {
    let (_, a) = gamma_sigma_constants(sigma);
    let ts = t.powf(sigma);
    m as f64 * (-ts).exp() + (-t * t / (4.0 * a * m as f64)).exp().max((-0.25 * ts).exp())
}

/// Log-normal case `Ψ_σ`, `σ ≥ 1`, `t ≥ 4σ`: `M = exp(32σ²)`,
/// `A = 2M + 5`, `λ = min(t/(2Am), 2 log²(1+σt)/(σ²t))`,
/// `L = log²(1 + 1/(σλ))/(32σ²λ)`.
pub fn psi_sigma_specialization(sigma: f64, m: usize, t: f64) -> Specialization {
    assert!(sigma >= 1.0);
    let big_m = (32.0 * sigma * sigma).exp();
    let a = 2.0 * big_m + 5.0;
    let s2 = sigma * sigma;
    let lambda = (t / (2.0 * a * m as f64)).min(2.0 * (sigma * t).ln_1p().powi(2) / (s2 * t)).min(1.0);
    let l = (1.0 / (sigma * lambda)).ln_1p().powi(2) / (32.0 * s2 * lambda);
    specialization(&psi_sigma(sigma), m, t, lambda, l.max(1.0), big_m, a)
}

/// Closed form of the log-normal concentration bound,
/// `m/Ψ_σ(t/1600) + max(exp(−t²/(4Am)), exp(−σ⁻² log²(1+σt)))`.
pub fn psi_sigma_concentration(sigma: f64, m: usize, t: f64) -> f64 {
    let a = 2.0 * (32.0 * sigma * sigma).exp() + 5.0;
    let psi = psi_sigma(sigma);
    m as f64 * psi.inv_psi(t / 1600.0)
        + (-t * t / (4.0 * a * m as f64)).exp().max((-(sigma * t).ln_1p().powi(2) / (sigma * sigma)).exp())
}

/// Finite sample, kept sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct TailSample {
    values: Vec<f64>,
}

impl TailSample {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("tail sample must be nonempty and finite".into()));
        }
        values.sort_by(f64::total_cmp);
        Ok(TailSample { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn count(&self) -> usize {
        self.values.len()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.count() as f64
    }

    pub fn max(&self) -> f64 {
        self.values[self.count() - 1]
    }
}

/// Exceedance frequency with its binomial uncertainty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TailEstimate {
    pub fraction: f64,
    pub exceed: usize,
    pub n: usize,
    /// `√(p(1−p)/n)`.
    pub stderr: f64,
    /// Half-width of the 95% Wilson interval.
    pub wilson_half_width: f64,
}

impl TailEstimate {
    /// Wilson score interval at `z` standard deviations.
    pub fn wilson(&self, z: f64) -> (f64, f64) {
        let n = self.n as f64;
        let p = self.fraction;
        let z2 = z * z;
        let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
        let half = z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
        (centre - half, centre + half)
    }
}

/// Fraction of sample values strictly above `t`.
pub fn empirical_tail(sample: &TailSample, t: f64) -> TailEstimate {
    let n = sample.count();
    let exceed = n - sample.values.partition_point(|&v| v <= t);
    let fraction = exceed as f64 / n as f64;
    let mut est = TailEstimate {
        fraction,
        exceed,
        n,
        stderr: (fraction * (1.0 - fraction) / n as f64).sqrt(),
        wilson_half_width: 0.0,
    };
    let (lo, hi) = est.wilson(1.96);
    est.wilson_half_width = 0.5 * (hi - lo);
    est
}

/// `trials` independent copies of `Σ_{k≤m}(E_k − 1)` with `E_k` standard
/// exponential. Trial `i` draws from its own substream.
pub fn centered_exponential_sums(m: usize, trials: usize, seed: u64) -> TailSample {
    let values: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, component::TRIALS, 0, &[i as i64]);
            (0..m).map(|_| { let e: f64 = Exp1.sample(&mut rng); e - 1.0 }).sum::<f64>()
        })
        .collect();
    TailSample::new(values).expect("finite sums")
}

/// `trials` draws of `max_{i≤n} X_i` with `X_i` iid and `P[X > t] = exp(−t^σ)`.
pub fn weibull_maxima(sigma: f64, n: usize, trials: usize, seed: u64) -> TailSample {
    let values: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, component::TRIALS, 1, &[i as i64]);
            (0..n)
                .map(|_| {
                    let u: f64 = rng.random();
                    (-(1.0 - u).ln()).powf(1.0 / sigma)
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    TailSample::new(values).expect("finite maxima")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constants_and_values() {
        let g1 = gamma_sigma(1.0);
        assert_eq!(g1.k, 2.0);
        assert_relative_eq!(g1.psi(2.0), std::f64::consts::E.powi(2), max_relative = 1e-14);
        assert_relative_eq!(gamma_sigma(0.5).k, 9.0, max_relative = 1e-14);
        let p1 = psi_sigma(1.0);
        assert_relative_eq!(p1.psi(std::f64::consts::E - 1.0), std::f64::consts::E, max_relative = 1e-14);
        assert_relative_eq!(p1.k, 14.778_112_197_861_3, max_relative = 1e-12);
    }

    #[test]
    fn c_psi_closed_forms() {
        // ∫₁^∞ t e^{-t} = 2/e, ∫₁^∞ t e^{-t²} = 1/(2e)
        assert!((gamma_sigma(1.0).c_psi() - 2.0 / std::f64::consts::E).abs() < 1e-9);
        assert!((gamma_sigma(2.0).c_psi() - 0.5 / std::f64::consts::E).abs() < 1e-9);
        // ∫₁^∞ t e^{-√t} = 2∫₁^∞ s³e^{-s} = 2·16/e
        assert!((gamma_sigma(0.5).c_psi() - 32.0 / std::f64::consts::E).abs() < 1e-8);
        // the bound Γ(2/σ)/σ used for the stretched exponential case
        for s in [0.25, 0.5, 0.75] {
            assert!(gamma_sigma(s).c_psi() <= gamma(2.0 / s) / s);
        }
    }

    #[test]
    fn moment_and_sum_constants() {
        let g1 = gamma_sigma(1.0);
        assert_relative_eq!(moment_bound(&g1, 1.0, 1.0), 1.0 + 4.0 * (1.0 + 2f64.ln()), max_relative = 1e-14);
        assert_relative_eq!(moment_bound(&g1, 2.0, 3.0), 8.0 * moment_bound(&g1, 1.0, 3.0), max_relative = 1e-14);
        assert_eq!(osum_bound(&g1, &[]), 0.0);
        assert_relative_eq!(osum_bound(&g1, &[0.5]), 4.0 * 128.0 * 0.5);
    }

    #[test]
    fn exp_bound_values() {
        assert_relative_eq!(conc_exp_bound(1.0, 1, 40f64.sqrt()), (-1f64).exp(), max_relative = 1e-14);
        assert!(conc_exp_bound(1.0, 10, 1e4) < 1e-300);
        assert!(conc_exp_bound(1.5, 10, 1.0) <= 1.0);
    }

    #[test]
    fn empirical_tail_counts() {
        let s = TailSample::new(vec![0.0; 5]).unwrap();
        assert_eq!(empirical_tail(&s, 1.0).fraction, 0.0);
        let s = TailSample::new(vec![3.0, 1.0, 0.0, 2.0]).unwrap();
        let e = empirical_tail(&s, 1.5);
        assert_eq!((e.fraction, e.exceed), (0.5, 2));
        let (lo, hi) = e.wilson(1.96);
        assert!(lo < 0.5 && hi > 0.5);
        assert!(TailSample::new(vec![]).is_err());
        assert!(TailSample::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn custom_growth_is_checked() {
        assert!(OrliczFunction::custom(|t| t.ln_1p().powi(2), 10.0).is_ok());
        // exp(t) ... with K = 1 fails
        assert!(matches!(OrliczFunction::custom(|t| t, 1.0), Err(Error::ConstraintViolated { .. })));
    }

    #[test]
    fn simpson_integrates_polynomials() {
        let v = adaptive_simpson(&|x| x.powi(3) - x, 0.0, 2.0, 1e-12, 4);
        assert!((v - 2.0).abs() < 1e-12);
    }
}
