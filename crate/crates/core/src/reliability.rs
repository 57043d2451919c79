//! Failure-probability estimators.
//!
//! * single loop: P̄f = mean of 1{g(xᵢ, zᵢ) ≤ 0} over joint draws;
//! * expected s: P̂f = mean of s(xᵢ) over input draws, where s comes from an
//!   emulator or a closed form;
//! * double loop: R replications per input point, averaged twice;
//! * trajectories: fix the latent draw, estimate P(g ≤ 0 | Z = z) by MCS
//!   over the inputs, then average over many latent draws.
//!
//! All Monte Carlo work is split into blocks of [`SIM_CHUNK`] points with
//! their own derived seeds, and partial results are combined in block order,
//! so estimates do not depend on the thread count.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::benchmarks::{self, StochasticSimulator, SIM_CHUNK};
use crate::emulator::Emulator;
use crate::error::{invalid, Error, Result};
use crate::glam::{self, GlamConfig, GlamModel};
use crate::inputs::RandomVector;
use crate::rng::{self, Rng};
use crate::spce::{self, SpceConfig, SpceModel};
use crate::stats;

/// Two-sided 95% standard normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "snake_case")]
pub enum EstimatorKind {
    SingleLoop,
    ExpectedS,
    DoubleLoop {
        replications: usize,
    },
    Trajectories {
        trajectories: usize,
        inputs_per_trajectory: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    Wilson,
    Normal,
}

/// 95% confidence interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    pub method: IntervalMethod,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PfEstimate {
    #[serde(flatten)]
    pub kind: EstimatorKind,
    pub pf: f64,
    /// Estimated variance of `pf`.
    pub variance: f64,
    /// √variance / pf; `None` when pf = 0.
    pub cov: Option<f64>,
    pub zero_mean: bool,
    pub ci95: Interval,
    /// Simulator or emulator evaluations used.
    pub n_evals: u64,
    pub seed: u64,
}

impl PfEstimate {
    fn new(kind: EstimatorKind, pf: f64, variance: f64, ci95: Interval, n_evals: u64, seed: u64) -> Self {
        let zero_mean = pf == 0.0;
        Self {
            kind,
            pf,
            variance,
            cov: (!zero_mean).then(|| variance.sqrt() / pf),
            zero_mean,
            ci95,
            n_evals,
            seed,
        }
    }

    pub fn std_error(&self) -> f64 {
        self.variance.sqrt()
    }
}

fn wilson(successes: u64, n: u64) -> Interval {
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    Interval {
        lower: (center - half).max(0.0),
        upper: (center + half).min(1.0),
        method: IntervalMethod::Wilson,
    }
}

fn normal_interval(pf: f64, variance: f64) -> Interval {
    let h = Z95 * variance.sqrt();
    Interval {
        lower: (pf - h).max(0.0),
        upper: (pf + h).min(1.0),
        method: IntervalMethod::Normal,
    }
}

/// (block index, first row, rows) for `n` points.
fn blocks(n: usize) -> Vec<(u64, usize, usize)> {
    (0..n.div_ceil(SIM_CHUNK))
        .map(|b| {
            let start = b * SIM_CHUNK;
            (b as u64, start, SIM_CHUNK.min(n - start))
        })
        .collect()
}

fn check_inputs(sim: &dyn StochasticSimulator, rv: &RandomVector) -> Result<()> {
    if rv.dim() != sim.dim() {
        return Err(Error::DimensionMismatch {
            expected: sim.dim(),
            got: rv.dim(),
        });
    }
    Ok(())
}

/// Runs the simulator R times at each of `n` input draws; returns the failure
/// count per point. Shared by the single and double loop so that R = 1
/// reproduces the single loop draw for draw.
fn replicated_counts(
    sim: &dyn StochasticSimulator,
    rv: &RandomVector,
    n: usize,
    replications: usize,
    seed: u64,
) -> Result<Vec<u32>> {
    let parts = crate::par::map(&blocks(n), |&(b, start, len)| -> Result<Vec<u32>> {
        let mut rx = rng::rng(rng::derive_seed(seed, "mc-inputs", b));
        let mut rz = rng::rng(rng::derive_seed(seed, "mc-runs", b));
        let mut x = vec![0.0; rv.dim()];
        let mut out = Vec::with_capacity(len);
        for i in 0..len {
            rv.sample_into(&mut rx, &mut x);
            let mut fails = 0;
            for _ in 0..replications {
                let g = sim.evaluate(&x, &mut rz);
                if g.is_nan() {
                    return Err(Error::NonFinite {
                        row: start + i,
                        what: format!("{} returned NaN", sim.name()),
                    });
                }
                fails += u32::from(g <= 0.0);
            }
            out.push(fails);
        }
        Ok(out)
    });
    let mut counts = Vec::with_capacity(n);
    for p in parts {
        counts.extend(p?);
    }
    Ok(counts)
}

/// Crude Monte Carlo over joint draws of (X, Z); variance pf(1 − pf)/N.
pub fn estimate_pf_single_loop(
    sim: &dyn StochasticSimulator,
    rv: &RandomVector,
    n: usize,
    seed: u64,
) -> Result<PfEstimate> {
    if n == 0 {
        return Err(invalid("n", "must be at least 1"));
    }
    check_inputs(sim, rv)?;
    let fails: u64 = replicated_counts(sim, rv, n, 1, seed)?
        .iter()
        .map(|&c| u64::from(c))
        .sum();
    let pf = fails as f64 / n as f64;
    Ok(PfEstimate::new(
        EstimatorKind::SingleLoop,
        pf,
        pf * (1.0 - pf) / n as f64,
        wilson(fails, n as u64),
        n as u64,
        seed,
    ))
}

/// Double-loop estimator: R runs at each of N input points. The variance is
/// the sample variance of the per-point failure fractions over N.
pub fn estimate_pf_double_loop(
    sim: &dyn StochasticSimulator,
    rv: &RandomVector,
    n: usize,
    replications: usize,
    seed: u64,
) -> Result<PfEstimate> {
    if n == 0 || replications == 0 {
        return Err(invalid("n", "N and R must be at least 1"));
    }
    check_inputs(sim, rv)?;
    let counts = replicated_counts(sim, rv, n, replications, seed)?;
    let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
    let pf = total as f64 / (n * replications) as f64;
    let fractions: Vec<f64> = counts.iter().map(|&c| f64::from(c) / replications as f64).collect();
    let variance = if n > 1 {
        stats::variance(&fractions) / n as f64
    } else {
        0.0
    };
    Ok(PfEstimate::new(
        EstimatorKind::DoubleLoop { replications },
        pf,
        variance,
        normal_interval(pf, variance),
        (n * replications) as u64,
        seed,
    ))
}

/// Trajectory estimator: for each of `n_traj` latent draws z, the fraction of
/// `n_x` input draws with g(x, z) ≤ 0; the estimate is their mean.
pub fn estimate_pf_trajectories(
    sim: &dyn StochasticSimulator,
    rv: &RandomVector,
    n_traj: usize,
    n_x: usize,
    seed: u64,
) -> Result<PfEstimate> {
    if n_traj == 0 || n_x == 0 {
        return Err(invalid("n_traj", "trajectory and input counts must be at least 1"));
    }
    check_inputs(sim, rv)?;
    let latent = sim
        .latent()
        .ok_or_else(|| Error::Unsupported(format!("{} does not expose its latent variables", sim.name())))?;
    let ids: Vec<u64> = (0..n_traj as u64).collect();
    let parts = crate::par::map(&ids, |&t| -> Result<f64> {
        let mut r = rng::rng(rng::derive_seed(seed, "trajectory", t));
        let mut z = vec![0.0; latent.dim()];
        latent.sample_into(&mut r, &mut z);
        let mut x = vec![0.0; rv.dim()];
        let mut fails = 0u64;
        for _ in 0..n_x {
            rv.sample_into(&mut r, &mut x);
            fails += u64::from(sim.evaluate_at_latent(&x, &z)? <= 0.0);
        }
        Ok(fails as f64 / n_x as f64)
    });
    let fractions = parts.into_iter().collect::<Result<Vec<_>>>()?;
    let pf = stats::mean(&fractions);
    let variance = if n_traj > 1 {
        stats::variance(&fractions) / n_traj as f64
    } else {
        pf * (1.0 - pf) / n_x as f64
    };
    Ok(PfEstimate::new(
        EstimatorKind::Trajectories {
            trajectories: n_traj,
            inputs_per_trajectory: n_x,
        },
        pf,
        variance,
        normal_interval(pf, variance),
        (n_traj * n_x) as u64,
        seed,
    ))
}

/// A conditional failure probability function x ↦ s(x) ∈ [0, 1].
pub trait ConditionalPf: Sync {
    /// An evaluator with its own scratch space, one per worker.
    fn evaluator(&self) -> Result<Box<dyn FnMut(&[f64]) -> f64 + '_>>;
}

impl ConditionalPf for GlamModel {
    fn evaluator(&self) -> Result<Box<dyn FnMut(&[f64]) -> f64 + '_>> {
        let mut p = glam::Predictor::new(self);
        Ok(Box::new(move |x| p.conditional_pf(x)))
    }
}

impl ConditionalPf for SpceModel {
    fn evaluator(&self) -> Result<Box<dyn FnMut(&[f64]) -> f64 + '_>> {
        let mut p = spce::Predictor::new(self)?;
        Ok(Box::new(move |x| p.conditional_pf(x)))
    }
}

impl ConditionalPf for Emulator {
    fn evaluator(&self) -> Result<Box<dyn FnMut(&[f64]) -> f64 + '_>> {
        match self {
            Emulator::Glam(m) => m.evaluator(),
            Emulator::Spce(m) => m.evaluator(),
        }
    }
}

/// The closed-form s of a benchmark simulator.
pub struct AnalyticS<'a>(&'a dyn StochasticSimulator);

impl<'a> AnalyticS<'a> {
    pub fn new(sim: &'a dyn StochasticSimulator) -> Result<Self> {
        let probe = sim.inputs().marginals().iter().map(|m| m.mean()).collect::<Vec<_>>();
        if sim.analytic_s(&probe).is_none() {
            return Err(Error::Unsupported(format!(
                "{} has no closed-form conditional failure probability",
                sim.name()
            )));
        }
        Ok(Self(sim))
    }
}

impl ConditionalPf for AnalyticS<'_> {
    fn evaluator(&self) -> Result<Box<dyn FnMut(&[f64]) -> f64 + '_>> {
        Ok(Box::new(|x| self.0.analytic_s(x).unwrap_or(f64::NAN)))
    }
}

/// Any thread-safe closure as a conditional failure probability.
pub struct FnS<F>(pub F);

impl<F: Fn(&[f64]) -> f64 + Sync> ConditionalPf for FnS<F> {
    fn evaluator(&self) -> Result<Box<dyn FnMut(&[f64]) -> f64 + '_>> {
        Ok(Box::new(|x| (self.0)(x)))
    }
}

/// s(xᵢ) at `n` input draws, in draw order.
fn s_values(s: &dyn ConditionalPf, rv: &RandomVector, n: usize, seed: u64) -> Result<Vec<f64>> {
    let parts = crate::par::map(&blocks(n), |&(b, start, len)| -> Result<Vec<f64>> {
        let mut r: Rng = rng::rng(rng::derive_seed(seed, "mc-inputs", b));
        let mut eval = s.evaluator()?;
        let mut x = vec![0.0; rv.dim()];
        let mut out = Vec::with_capacity(len);
        for i in 0..len {
            rv.sample_into(&mut r, &mut x);
            let v = eval(&x);
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!(
                    "conditional failure probability {v} outside [0, 1] at draw {}",
                    start + i
                )));
            }
            out.push(v);
        }
        Ok(out)
    });
    let mut all = Vec::with_capacity(n);
    for p in parts {
        all.extend(p?);
    }
    Ok(all)
}

/// P̂f = mean of s(Xᵢ); variance = sample variance of s(Xᵢ) / N.
pub fn estimate_pf_expected_s(s: &dyn ConditionalPf, rv: &RandomVector, n: usize, seed: u64) -> Result<PfEstimate> {
    if n < 2 {
        return Err(invalid("n", "must be at least 2"));
    }
    let v = s_values(s, rv, n, seed)?;
    let pf = stats::mean(&v).clamp(0.0, 1.0);
    let variance = stats::variance(&v) / n as f64;
    Ok(PfEstimate::new(
        EstimatorKind::ExpectedS,
        pf,
        variance,
        normal_interval(pf, variance),
        n as u64,
        seed,
    ))
}

/// The two terms of Var(1{g ≤ 0}) = E[s(1 − s)] + Var(s), from one sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceDecomposition {
    pub e_s_one_minus_s: f64,
    /// Population (1/N) variance, so that `sum` equals p̂(1 − p̂) exactly.
    pub var_s: f64,
    pub sum: f64,
}

pub fn variance_decomposition(
    s: &dyn ConditionalPf,
    rv: &RandomVector,
    n: usize,
    seed: u64,
) -> Result<VarianceDecomposition> {
    if n < 2 {
        return Err(invalid("n", "must be at least 2"));
    }
    let v = s_values(s, rv, n, seed)?;
    let m = stats::mean(&v);
    let within: Vec<f64> = v.iter().map(|s| s * (1.0 - s)).collect();
    let dev: Vec<f64> = v.iter().map(|s| (s - m) * (s - m)).collect();
    let e = stats::mean(&within);
    let var = stats::mean(&dev);
    Ok(VarianceDecomposition {
        e_s_one_minus_s: e,
        var_s: var,
        sum: e + var,
    })
}

// ---------------------------------------------------------------------------
// Repetition studies

/// How each repetition estimates Pf.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum StudyMethod {
    /// Single-loop MCS with as many simulator runs as the design size.
    Mcs,
    /// Expected-s estimator with the closed-form s (no emulator).
    AnalyticS,
    Glam {
        config: GlamConfig,
    },
    Spce {
        config: SpceConfig,
    },
}

impl StudyMethod {
    pub fn name(&self) -> &'static str {
        match self {
            StudyMethod::Mcs => "mcs",
            StudyMethod::AnalyticS => "analytic_s",
            StudyMethod::Glam { .. } => "glam",
            StudyMethod::Spce { .. } => "spce",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySpec {
    pub benchmark: String,
    pub method: StudyMethod,
    pub ed_sizes: Vec<usize>,
    pub repetitions: usize,
    /// Input draws of the expected-s estimator.
    pub n_mcs: usize,
    pub seed: u64,
}

/// One repetition; `pf` is `None` when it failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepetitionRecord {
    pub ed_size: usize,
    pub repetition: usize,
    pub seed: u64,
    pub pf: Option<f64>,
    pub std_error: Option<f64>,
    pub seconds: f64,
    /// Farther than 2.7 standard deviations from the mean of its group.
    pub outlier: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub ed_size: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub median: Option<f64>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// std / mean; `None` with `zero_mean` set when every estimate is 0,
    /// and `None` when fewer than two repetitions succeeded.
    pub cov: Option<f64>,
    pub zero_mean: bool,
    /// Normal 95% interval of the mean over repetitions.
    pub mean_ci95: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub benchmark: String,
    pub method: String,
    pub reference_pf: Option<f64>,
    pub outlier_rule: String,
    pub summaries: Vec<StudySummary>,
    pub records: Vec<RepetitionRecord>,
}

/// Median, mean, unbiased std and CoV of a set of estimates.
pub fn summarize(ed_size: usize, values: &[f64], failed: usize) -> StudySummary {
    let n = values.len();
    if n == 0 {
        return StudySummary {
            ed_size,
            succeeded: 0,
            failed,
            median: None,
            mean: None,
            std: None,
            cov: None,
            zero_mean: false,
            mean_ci95: None,
        };
    }
    let mean = stats::mean(values);
    // A single estimate has no spread to report.
    let std = (n >= 2).then(|| stats::variance(values).sqrt());
    let zero_mean = mean == 0.0;
    StudySummary {
        ed_size,
        succeeded: n,
        failed,
        median: Some(stats::median(values)),
        mean: Some(mean),
        std,
        cov: std.filter(|_| !zero_mean).map(|sd| sd / mean),
        zero_mean,
        mean_ci95: std.map(|sd| {
            let h = Z95 * sd / (n as f64).sqrt();
            (mean - h, mean + h)
        }),
    }
}

/// Runs `run(ed_size, seed)` for every design size and repetition. Seeds are
/// derived from `seed`, the size and the repetition index; failures are
/// recorded and excluded from the statistics.
pub fn repetition_study_with<F>(
    ed_sizes: &[usize],
    repetitions: usize,
    seed: u64,
    run: F,
) -> Result<(Vec<StudySummary>, Vec<RepetitionRecord>)>
where
    F: Fn(usize, u64) -> Result<PfEstimate> + Sync,
{
    if repetitions == 0 {
        return Err(invalid("repetitions", "must be at least 1"));
    }
    if ed_sizes.is_empty() {
        return Err(invalid("ed_sizes", "at least one size is required"));
    }
    let jobs: Vec<(usize, usize)> = ed_sizes
        .iter()
        .flat_map(|&n| (0..repetitions).map(move |r| (n, r)))
        .collect();
    let mut records = crate::par::map(&jobs, |&(n, r)| {
        let s = rng::derive_seed(rng::derive_seed(seed, "study-size", n as u64), "study-rep", r as u64);
        let t = Instant::now();
        let out = run(n, s);
        let seconds = t.elapsed().as_secs_f64();
        match out {
            Ok(e) => RepetitionRecord {
                ed_size: n,
                repetition: r,
                seed: s,
                pf: Some(e.pf),
                std_error: Some(e.std_error()),
                seconds,
                outlier: false,
                error: None,
            },
            Err(err) => RepetitionRecord {
                ed_size: n,
                repetition: r,
                seed: s,
                pf: None,
                std_error: None,
                seconds,
                outlier: false,
                error: Some(err.to_string()),
            },
        }
    });
    let mut summaries = Vec::new();
    for &n in ed_sizes {
        let vals: Vec<f64> = records.iter().filter(|r| r.ed_size == n).filter_map(|r| r.pf).collect();
        let failed = records.iter().filter(|r| r.ed_size == n && r.pf.is_none()).count();
        let s = summarize(n, &vals, failed);
        if let (Some(m), Some(sd)) = (s.mean, s.std) {
            for r in records.iter_mut().filter(|r| r.ed_size == n) {
                r.outlier = r.pf.is_some_and(|p| (p - m).abs() > 2.7 * sd);
            }
        }
        summaries.push(s);
    }
    Ok((summaries, records))
}

/// One full pipeline run: design of size `ed_size`, fit, estimate.
pub fn run_pipeline(
    sim: &dyn StochasticSimulator,
    method: &StudyMethod,
    ed_size: usize,
    n_mcs: usize,
    seed: u64,
) -> Result<PfEstimate> {
    let rv = sim.inputs();
    let mcs_seed = rng::derive_seed(seed, "pipeline-mcs", 0);
    match method {
        StudyMethod::Mcs => estimate_pf_single_loop(sim, rv, ed_size, mcs_seed),
        StudyMethod::AnalyticS => estimate_pf_expected_s(&AnalyticS::new(sim)?, rv, n_mcs, mcs_seed),
        StudyMethod::Glam { config } => {
            let data = benchmarks::experimental_design(sim, ed_size, rng::derive_seed(seed, "pipeline-design", 0))?;
            let mut cfg = config.clone();
            cfg.seed = rng::derive_seed(seed, "pipeline-fit", 0);
            let model = glam::fit(rv, &data, &cfg)?;
            estimate_pf_expected_s(&model, rv, n_mcs, mcs_seed)
        }
        StudyMethod::Spce { config } => {
            let data = benchmarks::experimental_design(sim, ed_size, rng::derive_seed(seed, "pipeline-design", 0))?;
            let mut cfg = config.clone();
            cfg.seed = rng::derive_seed(seed, "pipeline-fit", 0);
            let model = spce::fit(rv, &data, &cfg)?;
            estimate_pf_expected_s(&model, rv, n_mcs, mcs_seed)
        }
    }
}

/// Repetition study on a named benchmark.
pub fn repetition_study(spec: &StudySpec) -> Result<StudyResult> {
    let sim = benchmarks::by_name(&spec.benchmark)?;
    if spec.n_mcs < 2 && !matches!(spec.method, StudyMethod::Mcs) {
        return Err(invalid("n_mcs", "must be at least 2"));
    }
    let (summaries, records) = repetition_study_with(&spec.ed_sizes, spec.repetitions, spec.seed, |n, s| {
        run_pipeline(sim.as_ref(), &spec.method, n, spec.n_mcs, s)
    })?;
    Ok(StudyResult {
        benchmark: spec.benchmark.clone(),
        method: spec.method.name().into(),
        reference_pf: benchmarks::analytic_pf(&spec.benchmark)?,
        outlier_rule: "|pf - mean| > 2.7 std within each design size".into(),
        summaries,
        records,
    })
}

/// Long-format CSV of the repetitions of several studies, one row each.
pub fn write_study_csv(results: &[StudyResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "benchmark",
        "method",
        "ed_size",
        "repetition",
        "seed",
        "pf",
        "std_error",
        "seconds",
        "outlier",
        "error",
    ])?;
    for res in results {
        for r in &res.records {
            w.write_record([
                res.benchmark.clone(),
                res.method.clone(),
                r.ed_size.to_string(),
                r.repetition.to_string(),
                r.seed.to_string(),
                r.pf.map_or(String::new(), |v| format!("{v:?}")),
                r.std_error.map_or(String::new(), |v| format!("{v:?}")),
                format!("{:.3}", r.seconds),
                r.outlier.to_string(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

impl StudyResult {
    /// One row per repetition.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_study_csv(std::slice::from_ref(self), path)
    }

    /// Summary JSON (without the per-repetition records).
    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Out<'a> {
            benchmark: &'a str,
            method: &'a str,
            reference_pf: Option<f64>,
            outlier_rule: &'a str,
            summaries: &'a [StudySummary],
        }
        Ok(serde_json::to_string_pretty(&Out {
            benchmark: &self.benchmark,
            method: &self.method,
            reference_pf: self.reference_pf,
            outlier_rule: &self.outlier_rule,
            summaries: &self.summaries,
        })?)
    }

    pub fn write_summary_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.summary_json()?.as_bytes())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{rs_analytic_pf, rs_simulator};
    use crate::inputs::Marginal;

    struct Constant(f64);

    impl StochasticSimulator for Constant {
        fn name(&self) -> &str {
            "constant"
        }
        fn inputs(&self) -> &RandomVector {
            static RV: std::sync::OnceLock<RandomVector> = std::sync::OnceLock::new();
            RV.get_or_init(|| RandomVector::unnamed(vec![Marginal::uniform(0.0, 1.0).unwrap()]).unwrap())
        }
        fn evaluate(&self, _x: &[f64], _r: &mut Rng) -> f64 {
            self.0
        }
    }

    #[test]
    fn constant_limit_states() {
        let safe = Constant(1.0);
        let e = estimate_pf_single_loop(&safe, safe.inputs(), 1000, 1).unwrap();
        assert_eq!(e.pf, 0.0);
        assert!(e.zero_mean && e.cov.is_none());
        let fail = Constant(-1.0);
        let e = estimate_pf_single_loop(&fail, fail.inputs(), 1000, 1).unwrap();
        assert_eq!((e.pf, e.variance), (1.0, 0.0));
        let d = estimate_pf_double_loop(&fail, fail.inputs(), 100, 7, 1).unwrap();
        assert_eq!(d.pf, 1.0);
        let nan = Constant(f64::NAN);
        assert!(matches!(
            estimate_pf_single_loop(&nan, nan.inputs(), 10, 1),
            Err(Error::NonFinite { row: 0, .. })
        ));
    }

    #[test]
    fn single_loop_variance_is_binomial() {
        let sim = rs_simulator();
        let e = estimate_pf_single_loop(&sim, sim.inputs(), 50_000, 3).unwrap();
        assert_eq!(e.variance, e.pf * (1.0 - e.pf) / 50_000.0);
        assert!(e.ci95.lower <= e.pf && e.pf <= e.ci95.upper);
        assert_eq!(e.ci95.method, IntervalMethod::Wilson);
    }

    #[test]
    fn double_loop_with_one_replication_is_the_single_loop() {
        let sim = rs_simulator();
        let a = estimate_pf_single_loop(&sim, sim.inputs(), 20_000, 11).unwrap();
        let b = estimate_pf_double_loop(&sim, sim.inputs(), 20_000, 1, 11).unwrap();
        assert_eq!(a.pf, b.pf);
    }

    #[test]
    fn expected_s_constant() {
        let rv = Constant(0.0).inputs().clone();
        let e = estimate_pf_expected_s(&FnS(|_: &[f64]| 0.5), &rv, 100, 1).unwrap();
        assert_eq!((e.pf, e.variance), (0.5, 0.0));
        assert!(estimate_pf_expected_s(&FnS(|_: &[f64]| 1.5), &rv, 100, 1).is_err());
        assert!(estimate_pf_expected_s(&FnS(|_: &[f64]| 0.5), &rv, 1, 1).is_err());
    }

    #[test]
    fn decomposition_of_constants() {
        let rv = Constant(0.0).inputs().clone();
        let z = variance_decomposition(&FnS(|_: &[f64]| 0.0), &rv, 10, 1).unwrap();
        assert_eq!((z.e_s_one_minus_s, z.var_s, z.sum), (0.0, 0.0, 0.0));
        let h = variance_decomposition(&FnS(|_: &[f64]| 0.5), &rv, 10, 1).unwrap();
        assert_eq!((h.e_s_one_minus_s, h.var_s, h.sum), (0.25, 0.0, 0.25));
    }

    #[test]
    fn trajectories_need_latent_access() {
        let c = Constant(1.0);
        assert!(matches!(
            estimate_pf_trajectories(&c, c.inputs(), 10, 10, 1),
            Err(Error::Unsupported(_))
        ));
        let sim = rs_simulator();
        let e = estimate_pf_trajectories(&sim, sim.inputs(), 100, 10_000, 5).unwrap();
        assert!((e.pf - rs_analytic_pf()).abs() < 3.0 * e.std_error().max(1e-4));
    }

    #[test]
    fn study_of_a_deterministic_estimate_has_zero_cov() {
        let (s, r) = repetition_study_with(&[10, 20], 4, 9, |n, _| {
            Ok(PfEstimate::new(
                EstimatorKind::ExpectedS,
                0.25,
                0.0,
                normal_interval(0.25, 0.0),
                n as u64,
                0,
            ))
        })
        .unwrap();
        assert_eq!(r.len(), 8);
        assert_eq!(s[0].cov, Some(0.0));
        assert_eq!(s[1].median, Some(0.25));
        // seeds differ across repetitions and sizes
        let mut seeds: Vec<u64> = r.iter().map(|x| x.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 8);
    }

    #[test]
    fn failed_repetitions_are_counted_not_summarized() {
        let (s, r) = repetition_study_with(&[5], 5, 0, |_, seed| {
            if seed % 2 == 0 {
                Err(Error::FitFailed("synthetic".into()))
            } else {
                Ok(PfEstimate::new(
                    EstimatorKind::ExpectedS,
                    0.1,
                    0.0,
                    normal_interval(0.1, 0.0),
                    1,
                    seed,
                ))
            }
        })
        .unwrap();
        let failed = r.iter().filter(|x| x.error.is_some()).count();
        assert_eq!(s[0].failed, failed);
        assert_eq!(s[0].succeeded, 5 - failed);
    }

    #[test]
    fn all_zero_study_is_flagged() {
        let s = summarize(100, &[0.0, 0.0, 0.0], 0);
        assert!(s.zero_mean && s.cov.is_none());
    }

    #[test]
    fn single_repetition_has_undefined_spread() {
        let (s, r) = repetition_study_with(&[10], 1, 3, |_, seed| {
            Ok(PfEstimate::new(
                EstimatorKind::ExpectedS,
                0.2,
                0.0,
                normal_interval(0.2, 0.0),
                1,
                seed,
            ))
        })
        .unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(s[0].mean, Some(0.2));
        assert!(s[0].std.is_none() && s[0].cov.is_none() && s[0].mean_ci95.is_none());
        assert!(!r[0].outlier);
        assert!(repetition_study_with(&[10], 0, 3, |_, _| unreachable!()).is_err());
    }
}
