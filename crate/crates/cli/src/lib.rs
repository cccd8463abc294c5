//! Experiment driver behind the `cgflow` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use cgflow::cellsolve::{coarse_matrix, forget_field, set_default_tolerance};
use cgflow::fields::{bump, bump_covariance, layer_variance, partition_residual, FgfParams};
use cgflow::grids::pow3;
use cgflow::homogcheck::{calibrate, error_profile, harmonic_approx_forward, Calibration, Reference};
use cgflow::io::{write_field, Cell, Table};
use cgflow::matalg::Mat;
use cgflow::orlicz::{centered_exponential_sums, conc_exp_bound, empirical_tail};
use cgflow::renorm::{flow_monotonicity, mc_flow, theta_convergence_fit, FlowRecord, ThetaFit};
use cgflow::rng::sample_seed;
use cgflow::{Error, Region, SamplerSpec, TriadicCube};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Failure classes, each with its process exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Output could not be written.
    Io(String),
    /// A checked invariant failed.
    Assertion(String),
    /// A numerical solve failed.
    Solver(String),
    /// The configuration is malformed or infeasible.
    Config(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Assertion(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Config(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io(m) => write!(f, "io error: {m}"),
            CliError::Assertion(m) => write!(f, "assertion failed: {m}"),
            CliError::Solver(m) => write!(f, "solver failure: {m}"),
            CliError::Config(m) => write!(f, "config error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let m = e.to_string();
        match e {
            Error::InequalityViolated(_) | Error::OrderViolated(_) | Error::ConstraintViolated { .. } => CliError::Assertion(m),
            Error::BadSpec(_)
            | Error::InvalidInput(_)
            | Error::BadPartition { .. }
            | Error::OutOfBox
            | Error::PaddingTooSmall { .. }
            | Error::Unsupported(_) => CliError::Config(m),
            Error::Format(_) => CliError::Io(m),
            _ => CliError::Solver(m),
        }
    }
}

fn io(e: std::io::Error) -> CliError {
    CliError::Io(e.to_string())
}

pub type CliResult<T> = std::result::Result<T, CliError>;

// ---------------------------------------------------------------------------
// configuration

fn default_tol() -> f64 {
    1e-10
}
fn default_d() -> usize {
    2
}
fn default_s() -> f64 {
    0.5
}

/// One experiment, read from a single JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output: PathBuf,
    /// Worker threads; defaults to the number of logical cores.
    #[serde(default)]
    pub workers: Option<usize>,
    /// Relative residual of every linear solve.
    #[serde(default = "default_tol")]
    pub tolerance: f64,
    /// Largest field box side; defaults to 3⁶ in d = 1, 2 and 3⁴ in d = 3.
    #[serde(default)]
    pub box_side: Option<i64>,
    pub experiment: Experiment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    Flow {
        sampler: SamplerSpec,
        #[serde(default = "default_d")]
        d: usize,
        levels: Vec<u32>,
        samples: usize,
    },
    Homog {
        sampler: SamplerSpec,
        #[serde(default = "default_d")]
        d: usize,
        levels: Vec<u32>,
        samples: usize,
        /// Reference matrix a₀; estimated from the flow at the top level when absent.
        #[serde(default)]
        reference: Option<Vec<Vec<f64>>>,
        #[serde(default = "default_s")]
        s: f64,
        /// Calibration file; when given, forward ratios are checked against it.
        #[serde(default)]
        calibration: Option<PathBuf>,
        #[serde(default)]
        slack: f64,
    },
    Concentration {
        m: usize,
        trials: usize,
        /// Levels in units of √m.
        t_over_sqrt_m: Vec<f64>,
    },
    FgfValidate {
        fgf: FgfParams,
        samples: usize,
        half_widths: Vec<f64>,
        separation: f64,
        layers: Vec<i32>,
        layer_samples: usize,
    },
    Besov {
        sampler: SamplerSpec,
        #[serde(default = "default_d")]
        d: usize,
        level: u32,
        samples: usize,
        s: f64,
        p: f64,
        q: f64,
    },
    FieldSample {
        sampler: SamplerSpec,
        #[serde(default = "default_d")]
        d: usize,
        level: u32,
    },
}

const EXPERIMENTS: [&str; 6] = ["flow", "homog", "concentration", "fgf_validate", "besov", "field_sample"];

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Flow { .. } => "flow",
            Experiment::Homog { .. } => "homog",
            Experiment::Concentration { .. } => "concentration",
            Experiment::FgfValidate { .. } => "fgf_validate",
            Experiment::Besov { .. } => "besov",
            Experiment::FieldSample { .. } => "field_sample",
        }
    }
}

fn edit_distance(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.chars().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, cb) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(ca != *cb)).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

fn suggest(word: &str, known: &[&str]) -> String {
    let mut ranked: Vec<(usize, &str)> = known.iter().map(|k| (edit_distance(word, k), *k)).collect();
    ranked.sort();
    let close: Vec<&str> = ranked.iter().filter(|(d, _)| *d <= 3).map(|(_, k)| *k).collect();
    let hint = if close.is_empty() { String::new() } else { format!("; did you mean {}?", close.join(" or ")) };
    format!("{hint} (known: {})", known.join(", "))
}

/// Line of the first occurrence of `"kind": "<value>"` in the source.
fn line_of_kind(src: &str, value: &str) -> usize {
    let pat = format!("\"{value}\"");
    src.lines().position(|l| l.contains("\"kind\"") && l.contains(&pat)).map_or(1, |i| i + 1)
}

/// Parses a config, anchoring every error at a line of `origin`.
pub fn parse_config(src: &str, origin: &str) -> CliResult<ExperimentConfig> {
    let v: serde_json::Value = serde_json::from_str(src)
        .map_err(|e| CliError::Config(format!("{origin}:{}:{}: {}", e.line(), e.column(), strip_position(&e))))?;
    if let Some(kind) = v.pointer("/experiment/kind").and_then(|k| k.as_str()) {
        if !EXPERIMENTS.contains(&kind) {
            return Err(CliError::Config(format!(
                "{origin}:{}: unknown experiment '{kind}'{}",
                line_of_kind(src, kind),
                suggest(kind, &EXPERIMENTS)
            )));
        }
    }
    if let Some(kind) = v.pointer("/experiment/sampler/kind").and_then(|k| k.as_str()) {
        if !SamplerSpec::KINDS.contains(&kind) {
            return Err(CliError::Config(format!(
                "{origin}:{}: unknown sampler '{kind}'{}",
                line_of_kind(src, kind),
                suggest(kind, &SamplerSpec::KINDS)
            )));
        }
    }
    serde_json::from_str(src).map_err(|e| CliError::Config(format!("{origin}:{}:{}: {}", e.line(), e.column(), strip_position(&e))))
}

fn strip_position(e: &serde_json::Error) -> String {
    let s = e.to_string();
    match s.rfind(" at line ") {
        Some(i) => s[..i].to_string(),
        None => s,
    }
}

/// Reads a config file and applies the `CG_SEED` override.
pub fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    let src = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = parse_config(&src, &path.display().to_string())?;
    if let Ok(s) = std::env::var("CG_SEED") {
        cfg.seed = s.trim().parse().map_err(|_| CliError::Config(format!("CG_SEED must be an unsigned integer, got {s:?}")))?;
    }
    Ok(cfg)
}

fn check_sampler(sampler: &SamplerSpec, d: usize) -> CliResult<()> {
    if !(1..=3).contains(&d) {
        return Err(CliError::Config(format!("dimension {d} is not supported (1, 2 or 3)")));
    }
    sampler.check(d).map_err(|m| CliError::Config(format!("sampler {}: {m}", sampler.name())))
}

fn check_levels(levels: &[u32], extra: u32, box_side: i64) -> CliResult<()> {
    if levels.is_empty() {
        return Err(CliError::Config("levels must not be empty".into()));
    }
    for &l in levels {
        if l > 12 || pow3(l + extra) > box_side {
            let side = if l > 12 { i64::MAX } else { pow3(l + extra) };
            return Err(CliError::Config(format!(
                "level {l}: required cube side {} exceeds the field box side {box_side}",
                if side == i64::MAX { format!("3^{}", l + extra) } else { side.to_string() }
            )));
        }
    }
    Ok(())
}

/// Schema and feasibility checks that need no computation.
pub fn validate(cfg: &ExperimentConfig) -> CliResult<()> {
    if !(cfg.tolerance > 0.0 && cfg.tolerance < 1.0) {
        return Err(CliError::Config(format!("tolerance must lie in (0, 1), got {}", cfg.tolerance)));
    }
    if cfg.workers == Some(0) {
        return Err(CliError::Config("workers must be at least 1".into()));
    }
    let box_for = |d: usize| cfg.box_side.unwrap_or(if d >= 3 { pow3(4) } else { pow3(6) });
    let positive = |n: usize, what: &str| {
        if n == 0 {
            Err(CliError::Config(format!("{what} must be positive")))
        } else {
            Ok(())
        }
    };
    match &cfg.experiment {
        Experiment::Flow { sampler, d, levels, samples } => {
            check_sampler(sampler, *d)?;
            positive(*samples, "samples")?;
            check_levels(levels, 0, box_for(*d))
        }
        Experiment::Homog { sampler, d, levels, samples, reference, s, slack, .. } => {
            check_sampler(sampler, *d)?;
            positive(*samples, "samples")?;
            if !(*s > 0.0 && *s <= 1.0) {
                return Err(CliError::Config(format!("s must lie in (0, 1], got {s}")));
            }
            if !(*slack >= 0.0) {
                return Err(CliError::Config("slack must be nonnegative".into()));
            }
            if let Some(m) = reference {
                reference_from(m, *d)?;
            }
            if levels.contains(&0) {
                return Err(CliError::Config("level 0: homogenization checks need level ≥ 1".into()));
            }
            check_levels(levels, 1, box_for(*d))
        }
        Experiment::Concentration { m, trials, t_over_sqrt_m } => {
            positive(*m, "m")?;
            positive(*trials, "trials")?;
            if t_over_sqrt_m.is_empty() || t_over_sqrt_m.iter().any(|c| !(*c > 0.0)) {
                return Err(CliError::Config("t_over_sqrt_m must be a nonempty list of positive numbers".into()));
            }
            if t_over_sqrt_m.iter().any(|c| c * (*m as f64).sqrt() < 1.0) {
                return Err(CliError::Config("every level t must be at least 1".into()));
            }
            Ok(())
        }
        Experiment::FgfValidate { fgf, samples, half_widths, separation, layers, layer_samples } => {
            fgf.check(half_widths.len()).map_err(CliError::Config)?;
            if *samples < 2 || *layer_samples < 2 {
                return Err(CliError::Config("samples and layer_samples must be at least 2".into()));
            }
            if half_widths.len() != 2 || half_widths.iter().any(|w| !(*w > 0.0)) {
                return Err(CliError::Config("half_widths must hold two positive numbers".into()));
            }
            if !(*separation > 2.0 * half_widths[0]) {
                return Err(CliError::Config("separation must exceed twice the first half-width".into()));
            }
            if fgf.n_max > 7 || layers.iter().any(|n| *n < 1 || *n > 7) {
                return Err(CliError::Config("layers must lie in 1..=7".into()));
            }
            Ok(())
        }
        Experiment::Besov { sampler, d, level, samples, s, p, q } => {
            check_sampler(sampler, *d)?;
            positive(*samples, "samples")?;
            cgflow::besov::BesovSpec::positive(*s, *p, *q).check().map_err(|e| CliError::Config(e.to_string()))?;
            check_levels(&[*level], 0, box_for(*d))
        }
        Experiment::FieldSample { sampler, d, level } => {
            check_sampler(sampler, *d)?;
            check_levels(&[*level], 0, box_for(*d))
        }
    }
}

fn reference_from(m: &[Vec<f64>], d: usize) -> CliResult<Reference> {
    if m.len() != d || m.iter().any(|r| r.len() != d) {
        return Err(CliError::Config(format!("reference must be a {d}x{d} matrix")));
    }
    Reference::from_mat(&Mat::from_fn(d, d, |i, j| m[i][j])).map_err(|e| CliError::Config(format!("reference: {e}")))
}

// ---------------------------------------------------------------------------
// outputs

/// Checksums and provenance of one run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub config_sha256: String,
    pub seed: u64,
    pub workers: usize,
    pub code_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<OutputEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Files produced by one experiment.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
    /// Invariant failure found after the outputs were produced.
    failure: Option<String>,
}

impl Outputs {
    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        s.push('\n');
        self.add(name, s.into_bytes());
        Ok(())
    }

    fn fail(&mut self, msg: String) {
        self.failure.get_or_insert(msg);
    }
}

/// Writes the files and the manifest into the output directory.
fn persist(cfg: &ExperimentConfig, outputs: &Outputs, workers: usize, started: u64) -> CliResult<RunManifest> {
    std::fs::create_dir_all(&cfg.output).map_err(io)?;
    let mut entries = Vec::with_capacity(outputs.files.len());
    for (name, bytes) in &outputs.files {
        std::fs::write(cfg.output.join(name), bytes).map_err(io)?;
        entries.push(OutputEntry { file: name.clone(), sha256: sha256_hex(bytes) });
    }
    let canonical = serde_json::to_vec(cfg).map_err(|e| CliError::Io(e.to_string()))?;
    let manifest = RunManifest {
        experiment: cfg.experiment.name().into(),
        config_sha256: sha256_hex(&canonical),
        seed: cfg.seed,
        workers,
        code_version: env!("CARGO_PKG_VERSION").into(),
        started_unix: started,
        finished_unix: now(),
        outputs: entries,
    };
    let mut s = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    s.push('\n');
    std::fs::write(cfg.output.join("manifest.json"), s).map_err(io)?;
    Ok(manifest)
}

fn worker_count(cfg: &ExperimentConfig) -> usize {
    cfg.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(pool.install(f))
}

/// Runs an experiment, writes its outputs and manifest, and reports the
/// first invariant failure (if any) after everything is on disk.
pub fn run(cfg: &ExperimentConfig) -> CliResult<RunManifest> {
    validate(cfg)?;
    set_default_tolerance(cfg.tolerance)?;
    let workers = worker_count(cfg);
    let started = now();
    let outputs = in_pool(workers, || execute(cfg))??;
    let manifest = persist(cfg, &outputs, workers, started)?;
    match &outputs.failure {
        Some(m) => Err(CliError::Assertion(m.clone())),
        None => Ok(manifest),
    }
}

fn execute(cfg: &ExperimentConfig) -> CliResult<Outputs> {
    let mut out = Outputs::default();
    match &cfg.experiment {
        Experiment::Flow { sampler, d, levels, samples } => flow(&mut out, sampler, *d, levels, *samples, cfg.seed)?,
        Experiment::Homog { sampler, d, levels, samples, reference, s, calibration, slack } => {
            let r = match reference {
                Some(m) => reference_from(m, *d)?,
                None => estimate_reference(sampler, *d, *levels.iter().max().unwrap(), *samples, cfg.seed)?,
            };
            let cal = match calibration {
                Some(p) => Some(
                    Calibration::from_json(&std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?)
                        .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
                ),
                None => None,
            };
            homog(&mut out, sampler, *d, levels, *samples, &r, *s, cal.as_ref(), *slack, cfg.seed)?
        }
        Experiment::Concentration { m, trials, t_over_sqrt_m } => concentration(&mut out, *m, *trials, t_over_sqrt_m, cfg.seed)?,
        Experiment::FgfValidate { fgf, samples, half_widths, separation, layers, layer_samples } => {
            fgf_validate(&mut out, fgf, *samples, half_widths, *separation, layers, *layer_samples, cfg.seed)?
        }
        Experiment::Besov { sampler, d, level, samples, s, p, q } => besov(&mut out, sampler, *d, *level, *samples, [*s, *p, *q], cfg.seed)?,
        Experiment::FieldSample { sampler, d, level } => {
            let field = sampler.sample(&Region::from_cube(&TriadicCube::origin(*d, *level)), sample_seed(cfg.seed, *level, 0))?;
            let mut bytes = Vec::new();
            write_field(&field, &mut bytes)?;
            out.add("field.cgf", bytes);
        }
    }
    Ok(out)
}

fn flow(out: &mut Outputs, sampler: &SamplerSpec, d: usize, levels: &[u32], samples: usize, seed: u64) -> CliResult<()> {
    let recs = mc_flow(sampler, d, levels, samples, seed)?;
    let mut t = Table::new(&["level", "samples", "theta_n", "theta_n_stderr", "theta_hat", "fluct", "A_bar_flat"]);
    for r in &recs {
        t.push(vec![
            Cell::Int(r.level as i64),
            Cell::Int(r.samples as i64),
            Cell::Float(r.theta_n),
            Cell::Float(r.theta_n_stderr),
            Cell::Float(r.theta_hat),
            Cell::Float(r.fluct),
            Cell::Floats(r.a_bar.flat()),
        ]);
    }
    out.add("flow.csv", t.to_csv().into_bytes());
    #[derive(Serialize)]
    struct Mirror<'a> {
        records: &'a [FlowRecord],
        /// Absent when fewer than two levels carry a resolved Θ_n − 1.
        theta_fit: Option<ThetaFit>,
    }
    out.json("flow.json", &Mirror { records: &recs, theta_fit: theta_convergence_fit(&recs).ok() })?;
    for r in &recs {
        if r.failed > 0 {
            return Err(CliError::Solver(format!(
                "level {}: {} of {} samples failed ({})",
                r.level,
                r.failed,
                r.samples + r.failed,
                r.error.clone().unwrap_or_default()
            )));
        }
        if r.theta_n < 1.0 - 1e-9 {
            out.fail(format!("level {}: theta_n = {} < 1", r.level, r.theta_n));
        }
    }
    if recs.len() > 1 {
        let m = flow_monotonicity(&recs)?;
        if !m.holds(3.0) {
            out.fail(format!("flow is not monotone within 3 standard errors: {m:?}"));
        }
    }
    Ok(())
}

fn estimate_reference(sampler: &SamplerSpec, d: usize, level: u32, samples: usize, seed: u64) -> CliResult<Reference> {
    let recs: Vec<FlowRecord> = mc_flow(sampler, d, &[level], samples, seed)?;
    Ok(Reference::from_block(&recs[0].a_bar)?)
}

#[derive(Serialize)]
struct HomogSample {
    level: u32,
    index: u64,
    error_ratio: f64,
    bound_shape: f64,
    e1_max: f64,
    profile_e1: f64,
    profile_es: f64,
    level_max: Vec<f64>,
    block_dev_max: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn homog(
    out: &mut Outputs,
    sampler: &SamplerSpec,
    d: usize,
    levels: &[u32],
    samples: usize,
    r: &Reference,
    s: f64,
    cal: Option<&Calibration>,
    slack: f64,
    seed: u64,
) -> CliResult<()> {
    let mut rows = Vec::new();
    let mut t = Table::new(&["level", "error_ratio", "profile_E1", "profile_Es"]);
    for &n in levels {
        let outer = TriadicCube::origin(d, n + 1);
        let cube = TriadicCube::new(n, vec![pow3(n); d]);
        let per: Vec<cgflow::Result<HomogSample>> = (0..samples as u64)
            .into_par_iter()
            .map(|i| {
                let field = sampler.sample(&Region::from_cube(&outer), sample_seed(seed, n + 1, i))?;
                let res = (|| {
                    let fw = harmonic_approx_forward(&field, r, &cube, i)?;
                    let p = error_profile(&field, r, &cube, s)?;
                    Ok(HomogSample {
                        level: n,
                        index: i,
                        error_ratio: fw.error_ratio,
                        bound_shape: fw.bound_shape,
                        e1_max: fw.e1_max,
                        profile_e1: p.e_1,
                        profile_es: p.e_s,
                        level_max: p.level_max,
                        block_dev_max: p.block_dev_max,
                    })
                })();
                forget_field(&field);
                res
            })
            .collect();
        let per = per.into_iter().collect::<cgflow::Result<Vec<_>>>()?;
        let k = per.len() as f64;
        let mean = |f: &dyn Fn(&HomogSample) -> f64| per.iter().map(f).sum::<f64>() / k;
        t.push(vec![
            Cell::Int(n as i64),
            Cell::Float(mean(&|h| h.error_ratio)),
            Cell::Float(mean(&|h| h.profile_e1)),
            Cell::Float(mean(&|h| h.profile_es)),
        ]);
        if let Some(c) = cal {
            for h in &per {
                if h.error_ratio > (1.0 + slack) * c.forward_c * h.bound_shape {
                    out.fail(format!(
                        "level {n} sample {}: error ratio {} exceeds calibrated bound {}",
                        h.index,
                        h.error_ratio,
                        (1.0 + slack) * c.forward_c * h.bound_shape
                    ));
                }
            }
        }
        if per.iter().any(|h| !h.error_ratio.is_finite() || !h.profile_es.is_finite()) {
            out.fail(format!("level {n}: non-finite error ratio"));
        }
        rows.extend(per);
    }
    out.add("homog.csv", t.to_csv().into_bytes());
    #[derive(Serialize)]
    struct Mirror<'a> {
        reference: &'a Reference,
        reference_block: cgflow::BlockMatrix,
        s: f64,
        samples: &'a [HomogSample],
    }
    out.json("homog.json", &Mirror { reference: r, reference_block: r.block()?, s, samples: &rows })
}

fn concentration(out: &mut Outputs, m: usize, trials: usize, cs: &[f64], seed: u64) -> CliResult<()> {
    let sample = centered_exponential_sums(m, trials, seed);
    let mut t = Table::new(&["t", "empirical_tail", "bound", "margin"]);
    #[derive(Serialize)]
    struct Row {
        t: f64,
        empirical_tail: f64,
        stderr: f64,
        bound: f64,
        margin: f64,
    }
    let mut rows = Vec::new();
    for c in cs {
        let tv = c * (m as f64).sqrt();
        let e = empirical_tail(&sample, tv);
        let bound = conc_exp_bound(1.0, m, tv);
        let margin = bound - (e.fraction + 3.0 * e.stderr);
        t.push(vec![Cell::Float(tv), Cell::Float(e.fraction), Cell::Float(bound), Cell::Float(margin)]);
        if margin < 0.0 {
            out.fail(format!("t = {tv}: bound {bound} below empirical tail {} + 3 stderr", e.fraction));
        }
        rows.push(Row { t: tv, empirical_tail: e.fraction, stderr: e.stderr, bound, margin });
    }
    out.add("concentration.csv", t.to_csv().into_bytes());
    out.json("concentration.json", &rows)
}

#[allow(clippy::too_many_arguments)]
fn fgf_validate(
    out: &mut Outputs,
    fgf: &FgfParams,
    samples: usize,
    half_widths: &[f64],
    separation: f64,
    layers: &[i32],
    layer_samples: usize,
    seed: u64,
) -> CliResult<()> {
    let psi1 = bump(&[0.0, 0.0], half_widths);
    let psi2 = bump(&[separation, 0.0], half_widths);
    let cov = bump_covariance(fgf, &psi1, &psi2, samples, seed)?;
    let mut t = Table::new(&["check", "n", "empirical", "stderr", "exact_discrete", "reference", "relative_error"]);
    t.push(vec![
        Cell::Text("bump_covariance".into()),
        Cell::Int(-1),
        Cell::Float(cov.empirical),
        Cell::Float(cov.stderr),
        Cell::Float(cov.exact_discrete),
        Cell::Float(cov.continuum),
        Cell::Float(cov.relative_error()),
    ]);
    let vars = layers
        .iter()
        .map(|&n| layer_variance(fgf, n, 2, layer_samples, seed))
        .collect::<cgflow::Result<Vec<_>>>()?;
    let mean = vars.iter().map(|v| v.scaled_empirical).sum::<f64>() / vars.len().max(1) as f64;
    for v in &vars {
        t.push(vec![
            Cell::Text("layer_variance".into()),
            Cell::Int(v.n as i64),
            Cell::Float(v.scaled_empirical),
            Cell::Float(v.scaled_stderr),
            Cell::Float(v.scaled_exact),
            Cell::Float(mean),
            Cell::Float((v.scaled_empirical - mean).abs() / mean),
        ]);
    }
    let radii: Vec<f64> = (0..2000).map(|i| 1e-3 * 1.01f64.powi(i)).collect();
    let pu = partition_residual(&radii);
    t.push(vec![
        Cell::Text("partition_residual".into()),
        Cell::Int(-1),
        Cell::Float(pu),
        Cell::Float(0.0),
        Cell::Float(pu),
        Cell::Float(0.0),
        Cell::Float(pu),
    ]);
    out.add("fgf_validate.csv", t.to_csv().into_bytes());
    #[derive(Serialize)]
    struct Mirror<'a> {
        covariance: &'a cgflow::fields::BumpCovariance,
        layers: &'a [cgflow::fields::LayerVariance],
        partition_residual: f64,
    }
    out.json("fgf_validate.json", &Mirror { covariance: &cov, layers: &vars, partition_residual: pu })
}

fn besov(out: &mut Outputs, sampler: &SamplerSpec, d: usize, level: u32, samples: usize, spq: [f64; 3], seed: u64) -> CliResult<()> {
    use cgflow::besov::{besov_norm, besov_seminorm, BesovSpec};
    let spec = BesovSpec::positive(spq[0], spq[1], spq[2]);
    spec.check()?;
    let cube = TriadicCube::origin(d, level);
    let mut t = Table::new(&["sample", "seminorm", "norm", "theta_cube"]);
    let rows: Vec<cgflow::Result<(f64, f64, f64)>> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let field = sampler.sample(&Region::from_cube(&cube), sample_seed(seed, level, i))?;
            let vals: Vec<f64> = (0..field.region().ncells())
                .map(|c| {
                    let e = field.entries(c);
                    (0..d).map(|a| e[a * d + a]).sum::<f64>() / d as f64
                })
                .collect();
            let theta = cgflow::renorm::theta_hat(&coarse_matrix(&field, &cube)?)?;
            forget_field(&field);
            Ok((besov_seminorm(&vals, 1, &cube, &spec)?, besov_norm(&vals, 1, &cube, &spec)?, theta))
        })
        .collect();
    for (i, r) in rows.into_iter().enumerate() {
        let (a, b, c) = r?;
        t.push(vec![Cell::Int(i as i64), Cell::Float(a), Cell::Float(b), Cell::Float(c)]);
    }
    out.add("besov.csv", t.to_csv().into_bytes());
    Ok(())
}

/// Runs the forward and Lipschitz calibration for a `homog` config and
/// writes `calibration.json` with a manifest.
pub fn run_calibration(cfg: &ExperimentConfig) -> CliResult<RunManifest> {
    validate(cfg)?;
    set_default_tolerance(cfg.tolerance)?;
    let Experiment::Homog { sampler, d, levels, samples, reference, .. } = &cfg.experiment else {
        return Err(CliError::Config(format!("calibrate needs a homog experiment, got {}", cfg.experiment.name())));
    };
    let workers = worker_count(cfg);
    let started = now();
    let level = *levels.iter().max().unwrap();
    let outputs = in_pool(workers, || -> CliResult<Outputs> {
        let r = match reference {
            Some(m) => reference_from(m, *d)?,
            None => estimate_reference(sampler, *d, level, *samples, cfg.seed)?,
        };
        let c = calibrate(sampler, &r, level, *samples, cfg.seed)?;
        let mut out = Outputs::default();
        out.json("calibration.json", &c)?;
        Ok(out)
    })??;
    persist(cfg, &outputs, workers, started)
}

/// Writes one sampled field as `field.cgf`.
pub fn sample_field(cfg: &ExperimentConfig) -> CliResult<RunManifest> {
    let (sampler, d, level) = match &cfg.experiment {
        Experiment::FieldSample { sampler, d, level } => (sampler, *d, *level),
        Experiment::Flow { sampler, d, levels, .. }
        | Experiment::Homog { sampler, d, levels, .. } => (sampler, *d, *levels.iter().max().unwrap_or(&0)),
        Experiment::Besov { sampler, d, level, .. } => (sampler, *d, *level),
        other => return Err(CliError::Config(format!("experiment {} has no sampler", other.name()))),
    };
    let fs = ExperimentConfig { experiment: Experiment::FieldSample { sampler: sampler.clone(), d, level }, ..cfg.clone() };
    run(&fs)
}
