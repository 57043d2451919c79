//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails.
//!
//! Pass criterion numbers to run a subset, e.g.
//! `cargo test -p stochrel --test acceptance -- 1 2 5`.
//! The emulator studies (3, 4, 7) fit hundreds of models and take a while on
//! a single core.

use std::process::ExitCode;
use std::time::Instant;

use stochrel::benchmarks::{
    self, beam_analytic_pf, beam_simulator, glam_preset, moving_window_stats, rs_analytic_pf, rs_analytic_s,
    rs_simulator, spce_preset, StochasticSimulator, WindConfig, WindSimulator,
};
use stochrel::gld::GldParams;
use stochrel::pce::{gauss_nodes, BasisSpec, PolyFamily};
use stochrel::quad::integrate_adaptive;
use stochrel::reliability::{
    estimate_pf_double_loop, estimate_pf_expected_s, estimate_pf_single_loop, repetition_study, variance_decomposition,
    AnalyticS, StudyMethod, StudySpec,
};
use stochrel::rng::derive_seed;
use stochrel::spce::SpceModel;
use stochrel::{glam, lhs_sample, spce, Marginal, RandomVector};

const SEED: u64 = 20_240_601;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn sample_variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

/// Central 99% box of the R–S inputs as a `points × points` grid.
fn rs_grid(points: usize) -> Vec<[f64; 2]> {
    let sim = rs_simulator();
    let m = sim.inputs().marginals();
    let level = |i: usize| 0.005 + 0.99 * i as f64 / (points - 1) as f64;
    let mut out = Vec::with_capacity(points * points);
    for i in 0..points {
        for j in 0..points {
            out.push([m[0].quantile(level(i)).unwrap(), m[1].quantile(level(j)).unwrap()]);
        }
    }
    out
}

fn criterion_1() -> Outcome {
    let rs = rs_analytic_pf();
    let beam = beam_analytic_pf(0.02).unwrap();
    let pass = (rs - 3.154e-3).abs() <= 1e-6 && (beam - 1.019e-3).abs() <= 1e-6;
    outcome(
        pass,
        format!("rs {rs:.4e} (3.154e-3), beam {beam:.4e} (1.019e-3), tolerance 1e-6"),
    )
}

fn criterion_2() -> Outcome {
    let n = 1_000_000;
    let mut pass = true;
    let mut parts = Vec::new();
    for name in benchmarks::BENCHMARK_NAMES {
        let sim = benchmarks::by_name(name).unwrap();
        let reference = benchmarks::analytic_pf(name).unwrap().unwrap();
        let se = (reference * (1.0 - reference) / n as f64).sqrt();
        let mut worst: f64 = 0.0;
        let mut inside = 0;
        for k in 0..10 {
            let e = estimate_pf_single_loop(sim.as_ref(), sim.inputs(), n, derive_seed(SEED, "c2", k)).unwrap();
            let z = (e.pf - reference).abs() / se;
            worst = worst.max(z);
            inside += usize::from(z <= 4.0);
        }
        pass &= inside == 10;
        parts.push(format!("{name} {inside}/10 (max {worst:.2} SE)"));
    }
    outcome(pass, parts.join(", "))
}

fn study(benchmark: &str, method: StudyMethod, ed_size: usize, label: &str) -> (Option<f64>, Option<f64>, usize) {
    let spec = StudySpec {
        benchmark: benchmark.into(),
        method,
        ed_sizes: vec![ed_size],
        repetitions: 10,
        n_mcs: 1_000_000,
        seed: derive_seed(SEED, label, 0),
    };
    let r = repetition_study(&spec).unwrap();
    let s = &r.summaries[0];
    (s.median, s.cov, s.failed)
}

fn fmt_opt(v: Option<f64>, f: impl Fn(f64) -> String) -> String {
    v.map_or_else(|| "undefined".into(), f)
}

fn criterion_3() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, method) in [
        (
            "glam",
            StudyMethod::Glam {
                config: glam_preset("rs").unwrap(),
            },
        ),
        (
            "spce",
            StudyMethod::Spce {
                config: spce_preset("rs").unwrap(),
            },
        ),
    ] {
        let (median, cov, failed) = study("rs", method, 5000, &format!("c3-{name}"));
        let ok = failed == 0 && median.is_some_and(|m| (2.6e-3..=3.6e-3).contains(&m)) && cov.is_some_and(|c| c < 0.15);
        pass &= ok;
        parts.push(format!(
            "{name} median {} CoV {} failed {failed}",
            fmt_opt(median, |m| format!("{m:.4e}")),
            fmt_opt(cov, |c| format!("{:.1}%", 100.0 * c)),
        ));
    }
    outcome(
        pass,
        format!("{} (median in [2.6e-3, 3.6e-3], CoV < 15%)", parts.join("; ")),
    )
}

fn criterion_4() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, method, lo, hi) in [
        (
            "spce",
            StudyMethod::Spce {
                config: spce_preset("beam").unwrap(),
            },
            0.85e-3,
            1.30e-3,
        ),
        (
            "glam",
            StudyMethod::Glam {
                config: glam_preset("beam").unwrap(),
            },
            0.7e-3,
            1.1e-3,
        ),
    ] {
        let (median, cov, failed) = study("beam", method, 10_000, &format!("c4-{name}"));
        let ok = failed == 0 && median.is_some_and(|m| (lo..=hi).contains(&m));
        pass &= ok;
        parts.push(format!(
            "{name} median {} in [{lo:.2e}, {hi:.2e}]: {} (CoV {}, failed {failed})",
            fmt_opt(median, |m| format!("{m:.4e}")),
            if ok { "yes" } else { "no" },
            fmt_opt(cov, |c| format!("{:.1}%", 100.0 * c)),
        ));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_5() -> Outcome {
    let sim = rs_simulator();
    let s = AnalyticS::new(&sim).unwrap();
    let n = 10_000;
    let mut single = Vec::new();
    let mut expected = Vec::new();
    for k in 0..100 {
        single.push(
            estimate_pf_single_loop(&sim, sim.inputs(), n, derive_seed(SEED, "c5-single", k))
                .unwrap()
                .pf,
        );
        expected.push(
            estimate_pf_expected_s(&s, sim.inputs(), n, derive_seed(SEED, "c5-s", k))
                .unwrap()
                .pf,
        );
    }
    let vs = sample_variance(&single);
    let ve = sample_variance(&expected);
    outcome(
        ve < vs,
        format!(
            "variance expected-s {ve:.3e} < single-loop {vs:.3e} (ratio {:.1})",
            vs / ve
        ),
    )
}

fn criterion_6() -> Outcome {
    let sim = rs_simulator();
    let rv = sim.inputs();
    let p = rs_analytic_pf();
    let var_s = variance_decomposition(
        &AnalyticS::new(&sim).unwrap(),
        rv,
        1_000_000,
        derive_seed(SEED, "c6-oracle", 0),
    )
    .unwrap()
    .var_s;
    let budget = 1_000_000;
    let reps = 400;
    let mut pass = true;
    let mut previous = 0.0;
    let mut parts = Vec::new();
    for r in [1usize, 10, 50] {
        let n = budget / r;
        let pfs: Vec<f64> = (0..reps)
            .map(|k| {
                estimate_pf_double_loop(&sim, rv, n, r, derive_seed(SEED, &format!("c6-r{r}"), k))
                    .unwrap()
                    .pf
            })
            .collect();
        let empirical = sample_variance(&pfs);
        let formula = (p * (1.0 - p) + (r as f64 - 1.0) * var_s) / budget as f64;
        let rel = (empirical / formula - 1.0).abs();
        pass &= rel < 0.2 && empirical >= previous;
        previous = empirical;
        parts.push(format!(
            "R={r}: {empirical:.3e} vs {formula:.3e} ({:+.1}%)",
            100.0 * (empirical / formula - 1.0)
        ));
    }
    outcome(
        pass,
        format!("{} over {reps} runs; within 20% and non-decreasing", parts.join(", ")),
    )
}

fn criterion_7() -> (Outcome, Option<SpceModel>) {
    let sim = rs_simulator();
    let rv = sim.inputs();
    let data = benchmarks::experimental_design(&sim, 50_000, derive_seed(SEED, "c7-design", 0)).unwrap();
    let grid = rs_grid(50);
    let truth: Vec<f64> = grid.iter().map(|x| rs_analytic_s(x[0], x[1]).unwrap()).collect();
    let max_err = |f: &mut dyn FnMut(&[f64]) -> f64| {
        grid.iter()
            .zip(&truth)
            .map(|(x, t)| (f(x) - t).abs())
            .fold(0.0, f64::max)
    };

    let mut gcfg = glam_preset("rs").unwrap();
    gcfg.seed = derive_seed(SEED, "c7-glam", 0);
    let (g_err, g_note) = match glam::fit(rv, &data, &gcfg) {
        Ok(m) => {
            let mut p = glam::Predictor::new(&m);
            (max_err(&mut |x| p.conditional_pf(x)), String::new())
        }
        Err(e) => (f64::INFINITY, format!(" ({e})")),
    };
    let mut scfg = spce_preset("rs").unwrap();
    scfg.seed = derive_seed(SEED, "c7-spce", 0);
    let (s_err, s_note, model) = match spce::fit(rv, &data, &scfg) {
        Ok(m) => {
            let mut p = m.predictor().unwrap();
            (max_err(&mut |x| p.conditional_pf(x)), String::new(), Some(m.clone()))
        }
        Err(e) => (f64::INFINITY, format!(" ({e})"), None),
    };
    let pass = g_err < 0.02 && s_err < 0.02;
    let o = outcome(
        pass,
        format!("max |s_hat - s| on 50x50 grid: glam {g_err:.4}{g_note}, spce {s_err:.4}{s_note} (limit 0.02)"),
    );
    (o, model)
}

/// Battery of valid GLD parameters, including negative and zero shapes.
fn gld_battery() -> Vec<GldParams> {
    [
        [0.0, 1.0, 1.0, 1.0],
        [1.5, 2.0, 0.1, 0.3],
        [3.0, 2.0, 0.4, 0.4],
        [0.0, 1.0, 0.0, 0.0],
        [-2.0, 0.5, 0.14, 0.14],
        [0.0, 3.0, -0.1, 0.2],
        [0.0, 1.0, 0.3, -0.15],
        [10.0, 0.2, 1.2, 0.05],
        [0.0, 1.0, -0.2, -0.2],
    ]
    .into_iter()
    .map(|p| GldParams::new(p[0], p[1], p[2], p[3]).unwrap())
    .collect()
}

fn criterion_8(spce_model: Option<&SpceModel>) -> Outcome {
    let mut failures = Vec::new();

    // GLD round trips and normalization.
    let mut worst_round: f64 = 0.0;
    let mut worst_norm: f64 = 0.0;
    for p in gld_battery() {
        for i in 1..1000 {
            let u = i as f64 / 1000.0;
            worst_round = worst_round.max((p.cdf(p.quantile(u).unwrap()) - u).abs());
        }
        let lo = p.quantile(1e-12).unwrap();
        let hi = p.quantile(1.0 - 1e-12).unwrap();
        // split at the quartiles so that the adaptive rule sees the body
        let knots = [lo, p.quantile(0.25).unwrap(), p.quantile(0.75).unwrap(), hi];
        let mass: f64 = knots
            .windows(2)
            .map(|w| integrate_adaptive(|y| p.pdf(y), (w[0], w[1]), 1e-12))
            .sum();
        worst_norm = worst_norm.max((mass - (1.0 - 2e-12)).abs());
    }
    if worst_round >= 1e-10 {
        failures.push(format!("GLD round trip {worst_round:.1e}"));
    }
    if worst_norm >= 1e-8 {
        failures.push(format!("GLD normalization {worst_norm:.1e}"));
    }

    // Orthonormality under matched tensor Gauss quadrature.
    let mut worst_gram: f64 = 0.0;
    let all = [
        PolyFamily::Hermite,
        PolyFamily::Legendre,
        PolyFamily::Hermite,
        PolyFamily::Legendre,
    ];
    for dim in 1..=4 {
        for degree in 1..=6u32 {
            let families = all[..dim].to_vec();
            let basis = BasisSpec::new(families.clone(), degree, 1.0);
            let rules: Vec<_> = families
                .iter()
                .map(|&f| gauss_nodes(f, degree as usize + 1).unwrap())
                .collect();
            let len = basis.len();
            let mut gram = vec![0.0; len * len];
            let n1 = degree as usize + 1;
            for flat in 0..n1.pow(dim as u32) {
                let mut rest = flat;
                let mut x = vec![0.0; dim];
                let mut w = 1.0;
                for (d, rule) in rules.iter().enumerate() {
                    let k = rest % n1;
                    rest /= n1;
                    x[d] = rule.nodes[k];
                    w *= rule.weights[k];
                }
                let psi = basis.eval(&x).unwrap();
                for a in 0..len {
                    for b in 0..len {
                        gram[a * len + b] += w * psi[a] * psi[b];
                    }
                }
            }
            for a in 0..len {
                for b in 0..len {
                    let target: f64 = if a == b { 1.0 } else { 0.0 };
                    worst_gram = worst_gram.max((gram[a * len + b] - target).abs());
                }
            }
        }
    }
    if worst_gram >= 1e-8 {
        failures.push(format!("Gram deviation {worst_gram:.1e}"));
    }

    // SPCE monotonicity and quadrature convergence on the R–S model.
    let mut worst_nq: f64 = f64::NAN;
    let mut monotone = true;
    match spce_model {
        Some(model) => {
            let rv = model.inputs.clone();
            let xs = stochrel::mc_sample(&rv, 100, derive_seed(SEED, "c8-x", 0));
            let mut p = model.predictor().unwrap();
            let fine = model.with_quadrature_order(4 * model.quadrature_order).unwrap();
            let mut pf = fine.predictor().unwrap();
            worst_nq = 0.0;
            for i in 0..xs.nrows() {
                let x = xs.row(i);
                worst_nq = worst_nq.max((p.conditional_pf(x) - pf.conditional_pf(x)).abs());
                let (m, v) = p.mean_variance(x);
                let sd = v.sqrt();
                let mut last = 0.0;
                for k in 0..=400 {
                    let y = m - 8.0 * sd + 16.0 * sd * k as f64 / 400.0;
                    let c = p.cdf(x, y);
                    monotone &= c >= last && (0.0..=1.0).contains(&c);
                    last = c;
                }
            }
            if !monotone {
                failures.push("SPCE CDF not monotone".into());
            }
            if worst_nq >= 1e-6 {
                failures.push(format!("N_Q convergence {worst_nq:.1e}"));
            }
        }
        None => failures.push("no SPCE model from criterion 7".into()),
    }

    // LHS stratification.
    let rv = RandomVector::unnamed(vec![
        Marginal::lognormal_from_moments(5.0, 0.8).unwrap(),
        Marginal::uniform(-1.0, 3.0).unwrap(),
        Marginal::truncated_rayleigh(10.0, 3.0, 25.0).unwrap(),
        Marginal::gaussian(0.0, 2.0).unwrap(),
    ])
    .unwrap();
    let mut lhs_ok = true;
    for n in [1usize, 4, 17, 1000] {
        for seed in 0..20 {
            let x = lhs_sample(&rv, n, derive_seed(SEED, "c8-lhs", seed));
            for (j, m) in rv.marginals().iter().enumerate() {
                let mut hits = vec![0usize; n];
                for i in 0..n {
                    let bin = ((m.cdf(x.row(i)[j]) * n as f64).floor() as usize).min(n - 1);
                    hits[bin] += 1;
                }
                lhs_ok &= hits.iter().all(|&h| h == 1);
            }
        }
    }
    if !lhs_ok {
        failures.push("LHS stratification".into());
    }

    // Law of total variance on both analytic benchmarks.
    let mut ltv = Vec::new();
    let beam = beam_simulator(0.02).unwrap();
    let rs = rs_simulator();
    for (name, sim) in [("rs", &rs as &dyn StochasticSimulator), ("beam", &beam)] {
        let p = benchmarks::analytic_pf(name).unwrap().unwrap();
        let d = variance_decomposition(
            &AnalyticS::new(sim).unwrap(),
            sim.inputs(),
            1_000_000,
            derive_seed(SEED, "c8-ltv", 0),
        )
        .unwrap();
        let rel = (d.sum / (p * (1.0 - p)) - 1.0).abs();
        if rel >= 0.05 {
            failures.push(format!("total variance on {name} off by {:.1}%", 100.0 * rel));
        }
        ltv.push(format!("{name} {:.1}%", 100.0 * rel));
    }

    let detail = format!(
        "GLD round trip {worst_round:.1e}, normalization {worst_norm:.1e}, Gram {worst_gram:.1e}, \
         SPCE monotone {monotone}, N_Q 100 vs 400 {worst_nq:.1e}, LHS exact {lhs_ok}, total variance {}",
        ltv.join(" / ")
    );
    if failures.is_empty() {
        outcome(true, detail)
    } else {
        outcome(false, format!("{detail}; failed: {}", failures.join(", ")))
    }
}

fn criterion_9() -> Outcome {
    let sim = WindSimulator::new(WindConfig::default()).unwrap();
    let data = sim.response_dataset(1_000_000, derive_seed(SEED, "c9", 0)).unwrap();
    // Central grid: the interquartile range of U in steps of 0.5. Towards the
    // tails a window holds a few thousand points and the sampling error of a
    // variance of this skewed noise alone is several percent.
    let u = &sim.inputs().marginals()[0];
    let (lo, hi) = (u.quantile(0.25).unwrap(), u.quantile(0.75).unwrap());
    let grid: Vec<f64> = (0..)
        .map(|i| (2.0 * lo).ceil() / 2.0 + 0.5 * i as f64)
        .take_while(|&v| v <= hi)
        .collect();
    let stats = moving_window_stats(&data, 0.1, &grid, &[0.025, 0.5, 0.975]).unwrap();
    let mut worst_mean: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    let mut ordered = true;
    for w in &stats {
        let (Some(mean), Some(var), Some(q)) = (w.mean, w.variance, w.quantiles.as_ref()) else {
            return outcome(false, format!("window at u = {} is empty", w.u));
        };
        worst_mean = worst_mean.max((mean / sim.mean(w.u) - 1.0).abs());
        worst_var = worst_var.max((var / sim.spread(w.u).powi(2) - 1.0).abs());
        ordered &= q[0] <= q[1] && q[1] <= q[2];
    }
    let pass = worst_mean < 0.02 && worst_var < 0.05 && ordered;
    outcome(
        pass,
        format!(
            "max relative error on u in [{lo:.2}, {hi:.2}]: mean {:.2}% (< 2%), variance {:.2}% (< 5%), quantiles ordered {ordered}",
            100.0 * worst_mean,
            100.0 * worst_var
        ),
    )
}

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |k: u32| wanted.is_empty() || wanted.contains(&k);
    let titles = [
        "analytic oracles",
        "MCS consistency",
        "R-S emulator study, N = 5000",
        "beam emulator study, N = 10000",
        "variance reduction of the expected-s estimator",
        "double-loop variance formula",
        "conditional failure surface at N = 50000",
        "property suites",
        "moving-window statistics of the synthetic wind simulator",
    ];
    let mut results = Vec::new();
    let mut spce_model = None;
    for k in 1..=9u32 {
        // criterion 8 reuses the SPCE model of criterion 7
        if !(run(k) || (k == 7 && run(8))) {
            continue;
        }
        let t = Instant::now();
        let o = match k {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(),
            7 => {
                let (o, m) = criterion_7();
                spce_model = m;
                o
            }
            8 => criterion_8(spce_model.as_ref()),
            _ => criterion_9(),
        };
        let line = format!(
            "criterion {k} [{}]: {} ({:.0} s) {}",
            titles[k as usize - 1],
            if o.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            o.detail
        );
        println!("{line}");
        results.push((k, o.pass));
    }
    let failed: Vec<String> = results.iter().filter(|r| !r.1).map(|r| r.0.to_string()).collect();
    println!(
        "acceptance: {} of {} criteria passed{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failed: {}", failed.join(", "))
        }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
