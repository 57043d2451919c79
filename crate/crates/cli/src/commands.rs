//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use stochrel::benchmarks::{self, BENCHMARK_NAMES};
use stochrel::dataset::{load_dataset_csv, Provenance};
use stochrel::glam::{self, GlamConfig};
use stochrel::reliability::{self, ConditionalPf, StudyMethod, StudyResult, StudySpec, StudySummary};
use stochrel::rng::derive_seed;
use stochrel::spce::{self, SpceConfig};
use stochrel::{Emulator, Matrix, RandomVector};

use crate::config::{EmulatorKind, MethodName, RunConfig};
use crate::{BenchmarkArgs, Cli, CliError, Command, FitArgs, PredictArgs, ReliabilityArgs, StudyArgs};

const DEFAULT_N_MCS: usize = 1_000_000;
const DEFAULT_REPS: usize = 10;
const MAX_GRID_ROWS: usize = 1_000_000;

type Result<T> = std::result::Result<T, CliError>;

/// Settings shared by every command after merging file and flags.
struct Context {
    seed: u64,
    threads: Option<usize>,
    out_dir: PathBuf,
    config_path: Option<PathBuf>,
    started: Instant,
}

impl Context {
    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let threads = cli.common.threads.or(cfg.threads);
    if threads == Some(0) {
        return Err(CliError::validation("threads must be at least 1"));
    }
    let ctx = Context {
        seed: cli.common.seed.or(cfg.seed).unwrap_or(0),
        threads,
        out_dir: cli
            .common
            .out_dir
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from(".")),
        config_path: cli.common.config.clone(),
        started: Instant::now(),
    };
    // The analytic shortcut writes nothing, so it needs no output directory.
    if let Command::Benchmark(a) = &cli.command {
        if a.analytic_only || cfg.benchmark.as_ref().and_then(|b| b.analytic_only).unwrap_or(false) {
            return analytic(a, &cfg);
        }
    }
    if let Some(k) = threads {
        stochrel::configure_threads(k)?;
    }
    fs::create_dir_all(&ctx.out_dir).map_err(|e| {
        CliError::new(
            "io",
            format!("cannot create output directory {}: {e}", ctx.out_dir.display()),
        )
    })?;
    match &cli.command {
        Command::Fit(a) => fit(&ctx, &cfg, a),
        Command::Predict(a) => predict(&ctx, &cfg, a),
        Command::Reliability(a) => reliability_cmd(&ctx, &cfg, a),
        Command::Benchmark(a) => benchmark(&ctx, &cfg, a),
        Command::Study(a) => study(&ctx, &cfg, a),
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::validation(format!(
            "{what} `{}` does not exist",
            path.display()
        )))
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).map_err(|e| CliError::new("io", format!("cannot write {}: {e}", path.display())))
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Writes `provenance.json`: what ran, with which seed and config, on which
/// data, and digests of every output written.
fn write_provenance(ctx: &Context, command: &str, data: Option<&Provenance>, outputs: &[PathBuf]) -> Result<()> {
    let config = match &ctx.config_path {
        Some(p) => json!({ "path": p.display().to_string(), "sha256": sha256_file(p)? }),
        None => Value::Null,
    };
    let mut files = Vec::new();
    for p in outputs {
        files.push(json!({
            "file": p.file_name().map(|s| s.to_string_lossy().into_owned()),
            "sha256": sha256_file(p)?,
        }));
    }
    let doc = json!({
        "schema": "stochrel.provenance.v1",
        "tool": { "name": "stochrel", "version": env!("CARGO_PKG_VERSION") },
        "command": command,
        "seed": ctx.seed,
        "threads": ctx.threads,
        "config": config,
        "data": data,
        "outputs": files,
        "seconds": ctx.started.elapsed().as_secs_f64(),
    });
    let path = ctx.out("provenance.json");
    write_json(&path, &doc)?;
    for p in outputs.iter().chain([&path]) {
        println!("{}", p.display());
    }
    Ok(())
}

fn input_vector(cfg: &RunConfig, inputs_from: Option<&str>) -> Result<Option<RandomVector>> {
    match inputs_from {
        Some(name) => Ok(Some(benchmarks::by_name(name)?.inputs().clone())),
        None => cfg.input_vector(),
    }
}

fn load_model(cfg: &RunConfig, flag: Option<&PathBuf>) -> Result<(PathBuf, Emulator)> {
    let path = flag
        .or(cfg.model.as_ref())
        .cloned()
        .ok_or_else(|| CliError::validation("a model file is required (--model or `model` in the config)"))?;
    require_file(&path, "model file")?;
    let model = Emulator::load(&path)?;
    Ok((path, model))
}

// ---------------------------------------------------------------------------
// fit

fn fit(ctx: &Context, cfg: &RunConfig, a: &FitArgs) -> Result<()> {
    let data_path = a
        .data
        .clone()
        .or_else(|| cfg.data.as_ref().map(|d| d.path.clone()))
        .ok_or_else(|| CliError::validation("a dataset is required (--data or [data] path)"))?;
    require_file(&data_path, "dataset")?;
    let rv = input_vector(cfg, a.inputs_from.as_deref())?.ok_or_else(|| {
        CliError::validation("the input distribution is required ([[inputs]], inputs_from, or --inputs-from)")
    })?;
    let block = cfg.emulator.clone().unwrap_or_default();
    let kind = a.emulator.or(block.kind).unwrap_or(EmulatorKind::Glam);
    let fit_seed = derive_seed(ctx.seed, "fit", 0);
    let data = load_dataset_csv(&data_path, Some(rv.dim()))?;

    let t = Instant::now();
    let (model, metadata, log_likelihood) = match kind {
        EmulatorKind::Glam => {
            let config = GlamConfig {
                seed: fit_seed,
                ..block.glam.unwrap_or_default()
            };
            config.validate()?;
            let m = if data.groups.is_some() {
                glam::fit_replicated(&rv, &data, &config)?
            } else {
                glam::fit(&rv, &data, &config)?
            };
            let meta = serde_json::to_value(&m.metadata)?;
            let ll = m.metadata.log_likelihood;
            (Emulator::Glam(m), meta, ll)
        }
        EmulatorKind::Spce => {
            let config = SpceConfig {
                seed: fit_seed,
                ..block.spce.unwrap_or_default()
            };
            config.validate()?;
            let m = spce::fit(&rv, &data, &config)?;
            let meta = serde_json::to_value(&m.metadata)?;
            let ll = m.metadata.log_likelihood;
            (Emulator::Spce(m), meta, ll)
        }
    };
    let seconds = t.elapsed().as_secs_f64();

    // Conditional moments at the input medians, a quick sanity check.
    let median: Vec<f64> = rv
        .marginals()
        .iter()
        .map(|m| m.quantile(0.5))
        .collect::<stochrel::Result<_>>()?;
    let (mean, var) = model.mean_variance(&median)?;

    let model_path = ctx.out("model.json");
    model.save(&model_path)?;
    let report = json!({
        "schema": "stochrel.fit_report.v1",
        "kind": model.kind(),
        "seed": ctx.seed,
        "fit_seed": fit_seed,
        "n_samples": data.len(),
        "dim": rv.dim(),
        "log_likelihood": log_likelihood,
        "seconds": seconds,
        "metadata": metadata,
        "diagnostics": {
            "median_point": median,
            "mean_at_median": mean,
            "std_at_median": var.max(0.0).sqrt(),
            "s_at_median": model.conditional_pf(&median)?,
        },
    });
    let report_path = ctx.out("fit_report.json");
    write_json(&report_path, &report)?;
    write_provenance(ctx, "fit", data.provenance.as_ref(), &[model_path, report_path])
}

// ---------------------------------------------------------------------------
// predict

/// Reads the `x1..xM` columns of a CSV.
fn read_points(path: &Path, dim: usize) -> Result<Matrix> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header = r.headers()?.clone();
    let cols: Vec<usize> = (1..=dim)
        .map(|j| {
            let name = format!("x{j}");
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| CliError::new("data", format!("{}: missing column `{name}`", path.display())))
        })
        .collect::<Result<_>>()?;
    let mut xs = Vec::new();
    let mut n = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        for &c in &cols {
            let field = rec.get(c).unwrap_or("");
            let v: f64 = field.parse().map_err(|_| {
                CliError::new(
                    "data",
                    format!("{}: row {}: cannot parse `{field}`", path.display(), i + 1),
                )
            })?;
            if !v.is_finite() {
                return Err(CliError::new(
                    "data",
                    format!("{}: row {}: non-finite value", path.display(), i + 1),
                ));
            }
            xs.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(CliError::new("data", format!("{}: no rows", path.display())));
    }
    Ok(Matrix::from_vec(n, dim, xs))
}

/// Tensor grid over the central 99% box of the inputs.
fn grid_points(rv: &RandomVector, n: usize) -> Result<Matrix> {
    if n < 2 {
        return Err(CliError::validation("grid needs at least 2 points per input"));
    }
    let dim = rv.dim();
    let rows = (0..dim)
        .try_fold(1usize, |acc, _| acc.checked_mul(n))
        .filter(|&r| r <= MAX_GRID_ROWS);
    let rows = rows.ok_or_else(|| {
        CliError::validation(format!(
            "a grid of {n}^{dim} points exceeds the limit of {MAX_GRID_ROWS} rows"
        ))
    })?;
    let axes: Vec<Vec<f64>> = rv
        .marginals()
        .iter()
        .map(|m| {
            let (lo, hi) = (m.quantile(0.005)?, m.quantile(0.995)?);
            Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
        })
        .collect::<stochrel::Result<_>>()?;
    let mut x = Matrix::zeros(rows, dim);
    for r in 0..rows {
        let mut k = r;
        // last input varies fastest
        for j in (0..dim).rev() {
            x.row_mut(r)[j] = axes[j][k % n];
            k /= n;
        }
    }
    Ok(x)
}

fn predict(ctx: &Context, cfg: &RunConfig, a: &PredictArgs) -> Result<()> {
    let (_, model) = load_model(cfg, a.model.as_ref())?;
    let block = cfg.predict.clone().unwrap_or_default();
    let dim = model.inputs().dim();
    let x = match (&a.points, a.grid, &block.points) {
        (Some(p), _, _) | (None, None, Some(p)) => {
            require_file(p, "points file")?;
            read_points(p, dim)?
        }
        (None, Some(n), _) => grid_points(model.inputs(), n)?,
        (None, None, None) => return Err(CliError::validation("give --points or --grid")),
    };
    let y = a.y.or(block.y);
    if y.is_some_and(|v| !v.is_finite()) {
        return Err(CliError::validation("y must be finite"));
    }
    let path = ctx.out("predictions.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header: Vec<String> = (1..=dim).map(|j| format!("x{j}")).collect();
    header.extend(["mean", "std", "s", "extrapolating"].map(String::from));
    if y.is_some() {
        header.extend(["y", "cdf", "pdf"].map(String::from));
    }
    w.write_record(&header)?;
    let mut s_eval = model.evaluator()?;
    for row in x.rows() {
        let (mean, var) = model.mean_variance(row)?;
        let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
        rec.push(mean.to_string());
        rec.push(var.max(0.0).sqrt().to_string());
        rec.push(s_eval(row).to_string());
        rec.push(model.is_extrapolating(row).to_string());
        if let Some(y) = y {
            rec.push(y.to_string());
            rec.push(model.cdf(row, y)?.to_string());
            rec.push(model.pdf(row, y)?.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    drop(s_eval);
    write_provenance(ctx, "predict", None, &[path])
}

// ---------------------------------------------------------------------------
// reliability

fn reliability_cmd(ctx: &Context, cfg: &RunConfig, a: &ReliabilityArgs) -> Result<()> {
    let (model_path, model) = load_model(cfg, a.model.as_ref())?;
    let est = cfg.estimation.clone().unwrap_or_default();
    let n_mcs = a.n_mcs.or(est.n_mcs).unwrap_or(DEFAULT_N_MCS);
    if n_mcs < 2 {
        return Err(CliError::validation(format!("n_mcs must be at least 2 (got {n_mcs})")));
    }
    let rv = match cfg.input_vector()? {
        Some(rv) => {
            if rv.dim() != model.inputs().dim() {
                return Err(CliError::validation(format!(
                    "the configured inputs have {} components but the model expects {}",
                    rv.dim(),
                    model.inputs().dim()
                )));
            }
            rv
        }
        None => model.inputs().clone(),
    };
    let seed = derive_seed(ctx.seed, "reliability", 0);
    let estimate = reliability::estimate_pf_expected_s(&model, &rv, n_mcs, seed)?;
    let path = ctx.out("reliability.json");
    write_json(
        &path,
        &json!({
            "schema": "stochrel.reliability.v1",
            "model": model_path.display().to_string(),
            "model_kind": model.kind(),
            "n_mcs": n_mcs,
            "seed": ctx.seed,
            "estimate": estimate,
        }),
    )?;
    let mut outputs = vec![path];
    if let Some(k) = a.s_sample.or(est.s_sample).filter(|&k| k > 0) {
        let x = stochrel::mc_sample(&rv, k, derive_seed(ctx.seed, "s-sample", 0));
        let p = ctx.out("s_sample.csv");
        let mut w = csv::Writer::from_path(&p)?;
        let mut header: Vec<String> = (1..=rv.dim()).map(|j| format!("x{j}")).collect();
        header.push("s".into());
        w.write_record(&header)?;
        let mut s = model.evaluator()?;
        for row in x.rows() {
            let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
            rec.push(s(row).to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        outputs.push(p);
    }
    write_provenance(ctx, "reliability", None, &outputs)
}

// ---------------------------------------------------------------------------
// benchmark and study

fn analytic(a: &BenchmarkArgs, cfg: &RunConfig) -> Result<()> {
    let name = benchmark_name(
        a.name.as_deref(),
        cfg.benchmark.as_ref().and_then(|b| b.name.as_deref()),
    )?;
    let pf = benchmarks::analytic_pf(&name)?
        .ok_or_else(|| CliError::new("unsupported", format!("benchmark `{name}` has no closed-form Pf")))?;
    println!(
        "{}",
        serde_json::to_string(&json!({ "schema": "stochrel.analytic.v1", "benchmark": name, "pf": pf }))?
    );
    Ok(())
}

fn benchmark_name(flag: Option<&str>, file: Option<&str>) -> Result<String> {
    let name = flag.or(file).ok_or_else(|| {
        CliError::validation(format!(
            "a benchmark name is required; valid names: {}",
            BENCHMARK_NAMES.join(", ")
        ))
    })?;
    benchmarks::by_name(name)?;
    Ok(name.to_owned())
}

fn study_method(name: MethodName, benchmark: &str, cfg: &RunConfig) -> Result<StudyMethod> {
    let block = cfg.emulator.as_ref();
    Ok(match name {
        MethodName::Mcs => StudyMethod::Mcs,
        MethodName::Analytic => StudyMethod::AnalyticS,
        MethodName::Glam => StudyMethod::Glam {
            config: match block.and_then(|b| b.glam.clone()) {
                Some(c) => c,
                None => benchmarks::glam_preset(benchmark)?,
            },
        },
        MethodName::Spce => StudyMethod::Spce {
            config: match block.and_then(|b| b.spce.clone()) {
                Some(c) => c,
                None => benchmarks::spce_preset(benchmark)?,
            },
        },
    })
}

fn check_study_sizes(ed_sizes: &[usize], reps: usize) -> Result<()> {
    if ed_sizes.is_empty() || ed_sizes.contains(&0) {
        return Err(CliError::validation(
            "ed_sizes must be a non-empty list of positive sizes",
        ));
    }
    if reps == 0 {
        return Err(CliError::validation("reps must be at least 1"));
    }
    Ok(())
}

#[derive(Serialize)]
struct StudyEntry<'a> {
    benchmark: &'a str,
    method: &'a str,
    reference_pf: Option<f64>,
    outlier_rule: &'a str,
    summaries: &'a [StudySummary],
}

fn write_study_outputs(ctx: &Context, command: &str, n_mcs: usize, results: &[StudyResult]) -> Result<()> {
    let csv_path = ctx.out("study.csv");
    reliability::write_study_csv(results, &csv_path)?;
    let studies: Vec<StudyEntry> = results
        .iter()
        .map(|r| StudyEntry {
            benchmark: &r.benchmark,
            method: &r.method,
            reference_pf: r.reference_pf,
            outlier_rule: &r.outlier_rule,
            summaries: &r.summaries,
        })
        .collect();
    let json_path = ctx.out("study_summary.json");
    write_json(
        &json_path,
        &json!({
            "schema": "stochrel.study_summary.v1",
            "seed": ctx.seed,
            "n_mcs": n_mcs,
            "studies": studies,
        }),
    )?;
    write_provenance(ctx, command, None, &[csv_path, json_path])
}

fn run_studies(
    benchmark: &str,
    methods: &[MethodName],
    ed_sizes: Vec<usize>,
    reps: usize,
    n_mcs: usize,
    ctx: &Context,
    cfg: &RunConfig,
) -> Result<Vec<StudyResult>> {
    check_study_sizes(&ed_sizes, reps)?;
    let needs_mcs = methods.iter().any(|m| *m != MethodName::Mcs);
    if needs_mcs && n_mcs < 2 {
        return Err(CliError::validation(format!("n_mcs must be at least 2 (got {n_mcs})")));
    }
    methods
        .iter()
        .map(|&m| {
            let spec = StudySpec {
                benchmark: benchmark.to_owned(),
                method: study_method(m, benchmark, cfg)?,
                ed_sizes: ed_sizes.clone(),
                repetitions: reps,
                n_mcs,
                // Same seed for every method, so they share experimental designs.
                seed: ctx.seed,
            };
            Ok(reliability::repetition_study(&spec)?)
        })
        .collect()
}

fn benchmark(ctx: &Context, cfg: &RunConfig, a: &BenchmarkArgs) -> Result<()> {
    let block = cfg.benchmark.clone().unwrap_or_default();
    let name = benchmark_name(a.name.as_deref(), block.name.as_deref())?;
    let method = a.emulator.or(block.emulator).unwrap_or(MethodName::Spce);
    let ed_sizes = a.ed_sizes.clone().or(block.ed_sizes).unwrap_or_else(|| vec![1000]);
    let reps = a.reps.or(block.repetitions).unwrap_or(DEFAULT_REPS);
    let n_mcs = a.n_mcs.or(block.n_mcs).unwrap_or(DEFAULT_N_MCS);
    let results = run_studies(&name, &[method], ed_sizes, reps, n_mcs, ctx, cfg)?;
    write_study_outputs(ctx, "benchmark", n_mcs, &results)
}

fn study(ctx: &Context, cfg: &RunConfig, a: &StudyArgs) -> Result<()> {
    let block = cfg.study.clone().unwrap_or_default();
    let name = benchmark_name(a.benchmark.as_deref(), block.benchmark.as_deref())?;
    let methods = a
        .methods
        .clone()
        .or(block.methods)
        .unwrap_or_else(|| vec![MethodName::Glam, MethodName::Spce]);
    if methods.is_empty() {
        return Err(CliError::validation("at least one method is required"));
    }
    let ed_sizes = a.ed_sizes.clone().or(block.ed_sizes).unwrap_or_else(|| vec![1000]);
    let reps = a.reps.or(block.repetitions).unwrap_or(DEFAULT_REPS);
    let n_mcs = a.n_mcs.or(block.n_mcs).unwrap_or(DEFAULT_N_MCS);
    let results = run_studies(&name, &methods, ed_sizes, reps, n_mcs, ctx, cfg)?;
    write_study_outputs(ctx, "study", n_mcs, &results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use stochrel::Marginal;

    #[test]
    fn grid_covers_central_box() {
        let rv = RandomVector::unnamed(vec![
            Marginal::uniform(0.0, 1.0).unwrap(),
            Marginal::uniform(2.0, 4.0).unwrap(),
        ])
        .unwrap();
        let g = grid_points(&rv, 3).unwrap();
        assert_eq!(g.nrows(), 9);
        assert_eq!(g.row(0), &[0.005, 2.01]);
        assert_eq!(g.row(1)[0], 0.005);
        assert!((g.row(8)[1] - 3.99).abs() < 1e-12);
        assert!(grid_points(&rv, 1).is_err());
        assert!(grid_points(&rv, 2000).is_err());
    }
}
