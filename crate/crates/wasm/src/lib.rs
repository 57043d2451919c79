//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Three operations, each returning a JSON string so the page needs no
//! generated type glue beyond `wasm-bindgen`'s:
//!
//! * [`gld_curves`]: quantile, PDF and CDF curves of a generalized lambda
//!   distribution, with its validity and support.
//! * [`rs_estimates`]: single-loop MCS against the expected-s estimator on the
//!   R–S benchmark, plus the exact Pf.
//! * [`model_query`]: conditional mean, std, s(x) and the conditional PDF of
//!   a pasted model file at one input point.

use serde::Serialize;
use serde_json::json;
use stochrel::benchmarks::{rs_analytic_pf, rs_simulator};
use stochrel::gld::GldParams;
use stochrel::reliability::{estimate_pf_expected_s, estimate_pf_single_loop, AnalyticS, PfEstimate};
use stochrel::Emulator;
use wasm_bindgen::prelude::*;

/// Largest Monte Carlo sample the page may request.
const MAX_DRAWS: usize = 2_000_000;

fn to_js<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).unwrap_or_else(|e| error_json(&e.to_string()))
}

fn error_json(msg: &str) -> String {
    json!({ "error": msg }).to_string()
}

#[derive(Serialize)]
struct GldCurves {
    valid: bool,
    support: (f64, f64),
    mean: Option<f64>,
    std: Option<f64>,
    u: Vec<f64>,
    quantile: Vec<f64>,
    y: Vec<f64>,
    pdf: Vec<f64>,
    cdf: Vec<f64>,
}

fn gld_curves_impl(l1: f64, l2: f64, l3: f64, l4: f64, points: usize) -> Result<GldCurves, String> {
    let p = GldParams::new(l1, l2, l3, l4).map_err(|e| e.to_string())?;
    let n = points.clamp(10, 2000);
    let u: Vec<f64> = (1..n).map(|i| i as f64 / n as f64).collect();
    let quantile: Vec<f64> = u
        .iter()
        .map(|&v| p.quantile(v))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    // plot range: 0.5% to 99.5% quantiles
    let (lo, hi) = (
        p.quantile(0.005).map_err(|e| e.to_string())?,
        p.quantile(0.995).map_err(|e| e.to_string())?,
    );
    let y: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let (mean, var) = p.mean_variance();
    Ok(GldCurves {
        valid: p.is_valid(),
        support: p.support(),
        mean: mean.is_finite().then_some(mean),
        std: var.is_finite().then(|| var.max(0.0).sqrt()),
        pdf: y.iter().map(|&v| p.pdf(v)).collect(),
        cdf: y.iter().map(|&v| p.cdf(v)).collect(),
        u,
        quantile,
        y,
    })
}

/// Curves of GLD(λ1, λ2, λ3, λ4) on `points` levels.
#[wasm_bindgen]
pub fn gld_curves(l1: f64, l2: f64, l3: f64, l4: f64, points: usize) -> String {
    match gld_curves_impl(l1, l2, l3, l4, points) {
        Ok(c) => to_js(&c),
        Err(e) => error_json(&e),
    }
}

#[derive(Serialize)]
struct RsEstimates {
    exact: f64,
    single_loop: PfEstimate,
    expected_s: PfEstimate,
    /// Var(single loop) / Var(expected s).
    variance_ratio: Option<f64>,
}

fn rs_estimates_impl(n: usize, seed: u64) -> Result<RsEstimates, String> {
    if !(2..=MAX_DRAWS).contains(&n) {
        return Err(format!("n must be between 2 and {MAX_DRAWS}"));
    }
    let sim = rs_simulator();
    let rv = stochrel::benchmarks::StochasticSimulator::inputs(&sim).clone();
    let single = estimate_pf_single_loop(&sim, &rv, n, seed).map_err(|e| e.to_string())?;
    let s = AnalyticS::new(&sim).map_err(|e| e.to_string())?;
    let expected = estimate_pf_expected_s(&s, &rv, n, seed).map_err(|e| e.to_string())?;
    let ratio = (expected.variance > 0.0).then(|| single.variance / expected.variance);
    Ok(RsEstimates {
        exact: rs_analytic_pf(),
        single_loop: single,
        expected_s: expected,
        variance_ratio: ratio,
    })
}

/// Pf of the R–S benchmark from `n` draws: direct simulation against the
/// average of the exact conditional failure probability.
#[wasm_bindgen]
pub fn rs_estimates(n: usize, seed: u64) -> String {
    match rs_estimates_impl(n, seed) {
        Ok(r) => to_js(&r),
        Err(e) => error_json(&e),
    }
}

#[derive(Serialize)]
struct ModelQuery {
    kind: &'static str,
    names: Vec<String>,
    mean: f64,
    std: f64,
    s: f64,
    extrapolating: bool,
    y: Vec<f64>,
    pdf: Vec<f64>,
}

fn model_query_impl(model_json: &str, x: &[f64], points: usize) -> Result<ModelQuery, String> {
    let model = Emulator::from_json(model_json).map_err(|e| e.to_string())?;
    model.inputs().check_dim(x).map_err(|e| e.to_string())?;
    let (mean, var) = model.mean_variance(x).map_err(|e| e.to_string())?;
    let std = var.max(0.0).sqrt();
    let n = points.clamp(10, 1000);
    let (lo, hi) = (mean - 5.0 * std, mean + 5.0 * std);
    let y: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let pdf = y
        .iter()
        .map(|&v| model.pdf(x, v))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    Ok(ModelQuery {
        kind: model.kind(),
        names: model.inputs().names().to_vec(),
        mean,
        std,
        s: model.conditional_pf(x).map_err(|e| e.to_string())?,
        extrapolating: model.is_extrapolating(x),
        y,
        pdf,
    })
}

/// Conditional summary of a model file at `x`.
#[wasm_bindgen]
pub fn model_query(model_json: &str, x: &[f64], points: usize) -> String {
    match model_query_impl(model_json, x, points) {
        Ok(q) => to_js(&q),
        Err(e) => error_json(&e),
    }
}

/// Example model for the page: a constant SPCE N(1, 0.5²) over one uniform input.
#[wasm_bindgen]
pub fn example_model() -> String {
    use stochrel::inputs::Marginal;
    use stochrel::spce::{LatentFamily, SpceModel};
    use stochrel::RandomVector;
    let rv = RandomVector::new(vec!["x".into()], vec![Marginal::uniform(0.0, 1.0).expect("valid")]).expect("valid");
    let m = SpceModel::constant(rv, LatentFamily::Gaussian, 1.0, 0.5, 100).expect("valid");
    m.to_json().unwrap_or_else(|e| error_json(&e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn gld_normal_like_curves() {
        let v = parse(&gld_curves(0.0, 0.1975, 0.1349, 0.1349, 200));
        assert_eq!(v["valid"], true);
        let q = v["quantile"].as_array().unwrap();
        assert!(q.windows(2).all(|w| w[0].as_f64() < w[1].as_f64()));
        let cdf = v["cdf"].as_array().unwrap();
        assert!(cdf.first().unwrap().as_f64().unwrap() < 0.01);
        assert!(cdf.last().unwrap().as_f64().unwrap() > 0.99);
        assert!(parse(&gld_curves(0.0, -1.0, 0.1, 0.1, 50))["error"].is_string());
    }

    #[test]
    fn rs_expected_s_has_lower_variance() {
        let v = parse(&rs_estimates(200_000, 3));
        let exact = v["exact"].as_f64().unwrap();
        assert!((exact - 3.154e-3).abs() < 1e-6);
        assert!(v["variance_ratio"].as_f64().unwrap() > 1.0);
        let pf = v["expected_s"]["pf"].as_f64().unwrap();
        assert!((pf - exact).abs() < 4.0 * v["expected_s"]["variance"].as_f64().unwrap().sqrt());
        assert!(parse(&rs_estimates(1, 0))["error"].is_string());
    }

    #[test]
    fn constant_model_query() {
        let q = parse(&model_query(&example_model(), &[0.3], 101));
        assert_eq!(q["kind"], "spce");
        assert!((q["mean"].as_f64().unwrap() - 1.0).abs() < 1e-12);
        assert!((q["std"].as_f64().unwrap() - 0.5).abs() < 1e-9);
        assert!((q["s"].as_f64().unwrap() - stochrel::normal::cdf(-2.0)).abs() < 1e-12);
        assert!(parse(&model_query(&example_model(), &[0.3, 0.1], 10))["error"].is_string());
        assert!(parse(&model_query("{}", &[0.3], 10))["error"].is_string());
    }
}
