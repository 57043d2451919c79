//! Benchmark stochastic simulators with analytic references, experimental
//! design generation, and moving-window statistics for one-dimensional
//! datasets.
//!
//! Limit-state convention: failure ⇔ g ≤ 0. Every simulator here returns g.

mod wind;
mod window;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::glam::{GlamConfig, Selection};
use crate::inputs::{lhs_sample, Marginal, RandomVector};
use crate::matrix::Matrix;
use crate::normal;
use crate::rng::{self, Rng};
use crate::spce::SpceConfig;

pub use crate::dataset::{load_dataset_csv, provenance_sidecar_path, write_provenance_sidecar};
pub use wind::{WindConfig, WindSimulator};
pub use window::{moving_window_stats, WindowStats};

/// Rows per independently seeded block when simulating many points, so that
/// results do not depend on how work is split across threads.
pub const SIM_CHUNK: usize = 8192;

/// A simulator y = M(x, Z) with internal latent randomness Z.
pub trait StochasticSimulator: Send + Sync {
    fn name(&self) -> &str;

    /// Distribution of the inputs X.
    fn inputs(&self) -> &RandomVector;

    /// Distribution of the latent variables Z, when known.
    fn latent(&self) -> Option<&RandomVector> {
        None
    }

    /// One run at x with fresh latent randomness.
    fn evaluate(&self, x: &[f64], rng: &mut Rng) -> f64;

    /// Deterministic run at a fixed latent realization.
    fn evaluate_at_latent(&self, _x: &[f64], _z: &[f64]) -> Result<f64> {
        Err(Error::Unsupported(format!(
            "{} does not expose its latent variables",
            self.name()
        )))
    }

    /// Exact s(x) = P(g(x, Z) ≤ 0), when available in closed form.
    fn analytic_s(&self, _x: &[f64]) -> Option<f64> {
        None
    }

    fn dim(&self) -> usize {
        self.inputs().dim()
    }
}

/// Runs the simulator once at every row of `x`. Row i uses the stream of
/// block i / [`SIM_CHUNK`] derived from `seed`.
pub fn simulate(sim: &dyn StochasticSimulator, x: &Matrix, seed: u64) -> Result<Vec<f64>> {
    if x.ncols() != sim.dim() {
        return Err(Error::DimensionMismatch {
            expected: sim.dim(),
            got: x.ncols(),
        });
    }
    let blocks: Vec<usize> = (0..x.nrows().div_ceil(SIM_CHUNK)).collect();
    let parts = crate::par::map(&blocks, |&b| {
        let mut r = rng::rng(rng::derive_seed(seed, "simulate", b as u64));
        let end = ((b + 1) * SIM_CHUNK).min(x.nrows());
        (b * SIM_CHUNK..end)
            .map(|i| sim.evaluate(x.row(i), &mut r))
            .collect::<Vec<_>>()
    });
    let y: Vec<f64> = parts.into_iter().flatten().collect();
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: i,
            what: format!("{} output", sim.name()),
        });
    }
    Ok(y)
}

/// Replication-free experimental design: `n` LHS points, one run each.
pub fn experimental_design(sim: &dyn StochasticSimulator, n: usize, seed: u64) -> Result<Dataset> {
    let x = lhs_sample(sim.inputs(), n, rng::derive_seed(seed, "design", 0));
    let y = simulate(sim, &x, rng::derive_seed(seed, "design-runs", 0))?;
    Dataset::new(x, y)
}

/// Replicated design: `n_points` LHS points with `replications` runs each.
pub fn replicated_design(
    sim: &dyn StochasticSimulator,
    n_points: usize,
    replications: usize,
    seed: u64,
) -> Result<Dataset> {
    let pts = lhs_sample(sim.inputs(), n_points, rng::derive_seed(seed, "design", 0));
    let mut x = Matrix::zeros(n_points * replications, sim.dim());
    let mut groups = Vec::with_capacity(n_points * replications);
    for i in 0..n_points {
        for r in 0..replications {
            x.row_mut(i * replications + r).copy_from_slice(pts.row(i));
            groups.push(i as u64);
        }
    }
    let y = simulate(sim, &x, rng::derive_seed(seed, "design-runs", 0))?;
    Dataset::replicated(groups, x, y)
}

fn ln_marginal(mean: f64, std: f64) -> Marginal {
    Marginal::lognormal_from_moments(mean, std).expect("valid benchmark moments")
}

fn ln_params(m: &Marginal) -> (f64, f64) {
    match *m {
        Marginal::Lognormal { lambda, zeta } => (lambda, zeta),
        _ => unreachable!("benchmark variables are lognormal"),
    }
}

// ---------------------------------------------------------------------------
// Stochastic R–S

/// g = R/Z1 − S·Z2 with X = (R, S) and latent Z = (Z1, Z2), all lognormal.
#[derive(Clone, Debug)]
pub struct RsSimulator {
    inputs: RandomVector,
    latent: RandomVector,
}

/// The R–S benchmark with its reference distributions (mean, std):
/// R (5, 0.8), S (2, 0.6), Z1 (1, 0.028), Z2 (1, 0.096). Log-parameters are
/// derived from the moments.
pub fn rs_simulator() -> RsSimulator {
    RsSimulator {
        inputs: RandomVector::new(
            vec!["R".into(), "S".into()],
            vec![ln_marginal(5.0, 0.8), ln_marginal(2.0, 0.6)],
        )
        .expect("two inputs"),
        latent: RandomVector::new(
            vec!["Z1".into(), "Z2".into()],
            vec![ln_marginal(1.0, 0.028), ln_marginal(1.0, 0.096)],
        )
        .expect("two latent variables"),
    }
}

impl StochasticSimulator for RsSimulator {
    fn name(&self) -> &str {
        "rs"
    }

    fn inputs(&self) -> &RandomVector {
        &self.inputs
    }

    fn latent(&self) -> Option<&RandomVector> {
        Some(&self.latent)
    }

    fn evaluate(&self, x: &[f64], rng: &mut Rng) -> f64 {
        let mut z = [0.0; 2];
        self.latent.sample_into(rng, &mut z);
        x[0] / z[0] - x[1] * z[1]
    }

    fn evaluate_at_latent(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        self.inputs.check_dim(x)?;
        self.latent.check_dim(z)?;
        Ok(x[0] / z[0] - x[1] * z[1])
    }

    fn analytic_s(&self, x: &[f64]) -> Option<f64> {
        RsSimulator::analytic_s(self, *x.first()?, *x.get(1)?).ok()
    }
}

impl RsSimulator {
    /// Log-parameters (λ, ζ) of R, S, Z1, Z2.
    pub fn log_parameters(&self) -> [(f64, f64); 4] {
        let m = self.inputs.marginals();
        let z = self.latent.marginals();
        [ln_params(&m[0]), ln_params(&m[1]), ln_params(&z[0]), ln_params(&z[1])]
    }

    /// P(R/Z1 ≤ S·Z2): ln R − ln Z1 − ln S − ln Z2 is Gaussian.
    pub fn analytic_pf(&self) -> f64 {
        rs_pf_from_log_parameters(self.log_parameters())
    }

    /// s(r, s) = P(r/Z1 ≤ s·Z2) = Φ(−(ln r − λZ1 − ln s − λZ2)/√(ζZ1² + ζZ2²)).
    pub fn analytic_s(&self, r: f64, s: f64) -> Result<f64> {
        if !(r > 0.0 && s > 0.0) {
            return Err(Error::Domain(format!(
                "R–S conditional probability needs r, s > 0, got ({r}, {s})"
            )));
        }
        let [_, _, (l1, z1), (l2, z2)] = self.log_parameters();
        let arg = (r.ln() - l1 - s.ln() - l2) / (z1 * z1 + z2 * z2).sqrt();
        Ok(normal::cdf(-arg))
    }
}

/// R–S failure probability for arbitrary log-parameters of (R, S, Z1, Z2).
/// With all ζ = 0 the margin is deterministic.
pub fn rs_pf_from_log_parameters(p: [(f64, f64); 4]) -> f64 {
    let [(lr, zr), (ls, zs), (l1, z1), (l2, z2)] = p;
    let num = lr - l1 - ls - l2;
    let den = (zr * zr + zs * zs + z1 * z1 + z2 * z2).sqrt();
    if den == 0.0 {
        return if num > 0.0 {
            0.0
        } else if num < 0.0 {
            1.0
        } else {
            0.5
        };
    }
    normal::cdf(-num / den)
}

/// Reference R–S failure probability (≈ 3.154e-3).
pub fn rs_analytic_pf() -> f64 {
    rs_simulator().analytic_pf()
}

/// Reference R–S conditional failure probability.
pub fn rs_analytic_s(r: f64, s: f64) -> Result<f64> {
    rs_simulator().analytic_s(r, s)
}

// ---------------------------------------------------------------------------
// Simply supported beam

/// g = t_lim − 5 p L⁴ / (32 E b h³) with X = (p, L, b, h) and latent E.
/// SI base units throughout: p in N/m, lengths in m, E in Pa.
#[derive(Clone, Debug)]
pub struct BeamSimulator {
    pub t_lim: f64,
    inputs: RandomVector,
    latent: RandomVector,
}

/// Beam benchmark with distributions (mean, std): p (10 000, 2000) N/m,
/// L (5, 0.05) m, b (0.15, 7.5e-3) m, h (0.3, 0.015) m, latent E (3e10, 4.5e9) Pa.
pub fn beam_simulator(t_lim: f64) -> Result<BeamSimulator> {
    if !(t_lim > 0.0) {
        return Err(crate::error::invalid("t_lim", "must be positive"));
    }
    Ok(BeamSimulator {
        t_lim,
        inputs: RandomVector::new(
            vec!["p".into(), "L".into(), "b".into(), "h".into()],
            vec![
                ln_marginal(10_000.0, 2_000.0),
                ln_marginal(5.0, 0.05),
                ln_marginal(0.15, 7.5e-3),
                ln_marginal(0.3, 0.015),
            ],
        )?,
        latent: RandomVector::new(vec!["E".into()], vec![ln_marginal(3e10, 4.5e9)])?,
    })
}

fn beam_deflection(x: &[f64], e: f64) -> f64 {
    5.0 * x[0] * x[1].powi(4) / (32.0 * e * x[2] * x[3].powi(3))
}

impl StochasticSimulator for BeamSimulator {
    fn name(&self) -> &str {
        "beam"
    }

    fn inputs(&self) -> &RandomVector {
        &self.inputs
    }

    fn latent(&self) -> Option<&RandomVector> {
        Some(&self.latent)
    }

    fn evaluate(&self, x: &[f64], rng: &mut Rng) -> f64 {
        let e = self.latent.marginals()[0].sample(rng);
        self.t_lim - beam_deflection(x, e)
    }

    fn evaluate_at_latent(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        self.inputs.check_dim(x)?;
        self.latent.check_dim(z)?;
        Ok(self.t_lim - beam_deflection(x, z[0]))
    }

    fn analytic_s(&self, x: &[f64]) -> Option<f64> {
        BeamSimulator::analytic_s(self, x).ok()
    }
}

impl BeamSimulator {
    /// ln of the deflection is Gaussian with mean
    /// ln(5/32) + λp + 4λL − λE − λb − 3λh; Pf = P(deflection ≥ t_lim).
    pub fn analytic_pf(&self) -> f64 {
        let m = self.inputs.marginals();
        let (lp, zp) = ln_params(&m[0]);
        let (ll, zl) = ln_params(&m[1]);
        let (lb, zb) = ln_params(&m[2]);
        let (lh, zh) = ln_params(&m[3]);
        let (le, ze) = ln_params(&self.latent.marginals()[0]);
        let mu = (5.0f64 / 32.0).ln() + lp + 4.0 * ll - le - lb - 3.0 * lh;
        let sd = (zp * zp + 16.0 * zl * zl + ze * ze + zb * zb + 9.0 * zh * zh).sqrt();
        normal::cdf((mu - self.t_lim.ln()) / sd)
    }

    /// s(x) = P(E ≤ 5pL⁴/(32 b h³ t_lim)).
    pub fn analytic_s(&self, x: &[f64]) -> Result<f64> {
        self.inputs.check_dim(x)?;
        if x.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Domain("beam inputs must be positive".into()));
        }
        let e_crit = beam_deflection(x, 1.0) / self.t_lim;
        Ok(self.latent.marginals()[0].cdf(e_crit))
    }
}

/// Reference beam failure probability for a deflection threshold (m).
pub fn beam_analytic_pf(t_lim: f64) -> Result<f64> {
    Ok(beam_simulator(t_lim)?.analytic_pf())
}

// ---------------------------------------------------------------------------
// Toy generators used in tests and examples

/// y = a + b·x + noise(x) for a one-dimensional uniform input.
#[derive(Clone, Debug)]
pub struct AdditiveNoiseSimulator {
    inputs: RandomVector,
    slope: f64,
    noise: Noise,
}

#[derive(Clone, Copy, Debug)]
enum Noise {
    Uniform(f64),
    Gaussian(f64),
}

impl AdditiveNoiseSimulator {
    /// y = x + U(−half_width, half_width), x ~ U(lower, upper).
    pub fn uniform_noise(lower: f64, upper: f64, half_width: f64) -> Result<Self> {
        Ok(Self {
            inputs: RandomVector::unnamed(vec![Marginal::uniform(lower, upper)?])?,
            slope: 1.0,
            noise: Noise::Uniform(half_width),
        })
    }

    /// y = x + std·ξ with ξ ~ N(0, 1), x ~ U(lower, upper).
    pub fn gaussian_noise(lower: f64, upper: f64, std: f64) -> Result<Self> {
        Ok(Self {
            inputs: RandomVector::unnamed(vec![Marginal::uniform(lower, upper)?])?,
            slope: 1.0,
            noise: Noise::Gaussian(std),
        })
    }
}

impl StochasticSimulator for AdditiveNoiseSimulator {
    fn name(&self) -> &str {
        "additive-noise"
    }

    fn inputs(&self) -> &RandomVector {
        &self.inputs
    }

    fn evaluate(&self, x: &[f64], rng: &mut Rng) -> f64 {
        let e = match self.noise {
            Noise::Uniform(w) => w * (2.0 * rng::open01(rng) - 1.0),
            Noise::Gaussian(s) => s * rng.sample::<f64, _>(StandardNormal),
        };
        self.slope * x[0] + e
    }

    fn evaluate_at_latent(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        self.inputs.check_dim(x)?;
        if z.len() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: z.len(),
            });
        }
        let e = match self.noise {
            Noise::Uniform(w) => w * (2.0 * z[0] - 1.0),
            Noise::Gaussian(s) => s * z[0],
        };
        Ok(self.slope * x[0] + e)
    }

    fn analytic_s(&self, x: &[f64]) -> Option<f64> {
        let m = self.slope * x.first()?;
        Some(match self.noise {
            Noise::Uniform(w) => ((w - m) / (2.0 * w)).clamp(0.0, 1.0),
            Noise::Gaussian(s) => normal::cdf(-m / s),
        })
    }
}

/// Looks up a benchmark by name: `rs`, `beam` (t_lim = 0.02 m), or
/// `synthetic-wind` (default configuration).
pub fn by_name(name: &str) -> Result<Box<dyn StochasticSimulator>> {
    match name {
        "rs" => Ok(Box::new(rs_simulator())),
        "beam" => Ok(Box::new(beam_simulator(0.02)?)),
        "synthetic-wind" => Ok(Box::new(WindSimulator::new(WindConfig::default())?)),
        other => Err(unknown_benchmark(other)),
    }
}

fn unknown_benchmark(name: &str) -> Error {
    Error::Domain(format!(
        "unknown benchmark `{name}`; valid names: {}",
        BENCHMARK_NAMES.join(", ")
    ))
}

pub const BENCHMARK_NAMES: [&str; 3] = ["rs", "beam", "synthetic-wind"];

/// Analytic failure probability of a named benchmark, when one exists.
pub fn analytic_pf(name: &str) -> Result<Option<f64>> {
    Ok(match name {
        "rs" => Some(rs_analytic_pf()),
        "beam" => Some(beam_analytic_pf(0.02)?),
        "synthetic-wind" => Some(WindSimulator::new(WindConfig::default())?.reference_pf()),
        other => {
            by_name(other)?;
            None
        }
    })
}

/// GLaM candidate grid used for a named benchmark. Degrees follow the
/// reference study; the candidate is chosen by 5-fold cross-validation.
pub fn glam_preset(name: &str) -> Result<GlamConfig> {
    let (ls, sh) = match name {
        "rs" => ((0, 3), (0, 2)),
        "beam" => ((1, 4), (0, 2)),
        "synthetic-wind" => ((1, 10), (0, 3)),
        other => return Err(unknown_benchmark(other)),
    };
    Ok(GlamConfig {
        location_scale_degrees: ls,
        shape_degrees: sh,
        selection: Selection::CrossValidation { folds: 5 },
        ..GlamConfig::default()
    })
}

/// SPCE candidate grid used for a named benchmark.
pub fn spce_preset(name: &str) -> Result<SpceConfig> {
    let degrees = match name {
        "rs" => (0, 4),
        "beam" => (1, 7),
        "synthetic-wind" => (1, 10),
        other => return Err(unknown_benchmark(other)),
    };
    Ok(SpceConfig {
        degrees,
        ..SpceConfig::default()
    })
}
