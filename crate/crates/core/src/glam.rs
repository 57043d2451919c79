//! Generalized lambda models (GLaM).
//!
//! The response distribution at input x is an FKML generalized lambda
//! distribution whose parameters are polynomial chaos expansions of x:
//!
//! ```text
//! λ1(x) = Σ c1α ψα(x),  λ2(x) = exp(Σ c2α ψα(x)),  λ3(x) = Σ c3α ψα(x),  λ4(x) = Σ c4α ψα(x)
//! ```
//!
//! The coefficients are fitted by maximum likelihood on replication-free
//! data, or by the two-step procedure (local moment fits, then least
//! squares) when replications are available.

use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gld::{self, box_cox, box_cox_dlambda, GldParams, Inversion, Level};
use crate::inputs::RandomVector;
use crate::matrix::{least_squares, Matrix};
use crate::optim::{lbfgs, LbfgsOptions};
use crate::pce::basis::Evaluator;
use crate::pce::{BasisSpec, DesignMatrix, MultiIndex};
use crate::rng;

pub const MODEL_KIND: &str = "glam";
pub const MODEL_VERSION: u32 = 1;

/// ln(1e-10): base log-likelihood of an observation outside the predicted support.
const FLOOR_LN: f64 = -23.025_850_929_940_457;

/// How the winning candidate is chosen. Scores are maximized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum Selection {
    /// score = −BIC = 2L − k ln N.
    Bic,
    /// score = mean held-out log-likelihood per point over k folds.
    CrossValidation { folds: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub max_iter: usize,
    /// Relative decrease of the negative mean log-likelihood below which
    /// the optimizer stops.
    pub rel_tol: f64,
    /// Extra optimizer runs per candidate from perturbed starting points.
    pub restarts: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            max_iter: 500,
            rel_tol: 1e-7,
            restarts: 0,
        }
    }
}

/// Candidate grid and fitting options.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlamConfig {
    /// Inclusive degree range shared by λ1 and λ2.
    pub location_scale_degrees: (u32, u32),
    /// Inclusive degree range shared by λ3 and λ4.
    pub shape_degrees: (u32, u32),
    pub q_grid: Vec<f64>,
    pub selection: Selection,
    pub optimizer: OptimizerSettings,
    /// Stop raising the λ1/λ2 degree after two consecutive candidates fail
    /// to improve the score.
    pub early_stop: bool,
    pub seed: u64,
}

impl Default for GlamConfig {
    fn default() -> Self {
        Self {
            location_scale_degrees: (0, 3),
            shape_degrees: (0, 2),
            q_grid: vec![0.7, 0.8, 0.9, 1.0],
            selection: Selection::Bic,
            optimizer: OptimizerSettings::default(),
            early_stop: true,
            seed: 0,
        }
    }
}

impl GlamConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.location_scale_degrees;
        let (c, d) = self.shape_degrees;
        if a > b || c > d {
            return Err(crate::error::invalid("degrees", "range minimum exceeds maximum"));
        }
        if self.q_grid.is_empty() || self.q_grid.iter().any(|q| !(*q > 0.0 && *q <= 1.0)) {
            return Err(crate::error::invalid("q_grid", "values must lie in (0, 1]"));
        }
        if let Selection::CrossValidation { folds } = self.selection {
            if folds < 2 {
                return Err(crate::error::invalid("folds", "need at least 2 folds"));
            }
        }
        if self.optimizer.max_iter == 0 {
            return Err(crate::error::invalid("max_iter", "must be positive"));
        }
        Ok(())
    }
}

/// One PCE: basis plus coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expansion {
    pub basis: BasisSpec,
    pub coefficients: Vec<f64>,
}

impl Expansion {
    fn constant(families: &[crate::pce::PolyFamily], value: f64) -> Self {
        Self {
            basis: BasisSpec::new(families.to_vec(), 0, 1.0),
            coefficients: vec![value],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStatus {
    Fitted,
    /// Too few samples for the basis size (N < 10 P).
    Skipped,
    /// Predicted parameters not finite on the training design.
    Invalid,
    /// Not reached because of early stopping.
    NotReached,
}

/// Outcome of one candidate fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub location_scale_degree: u32,
    pub shape_degree: u32,
    pub q_norm: f64,
    pub n_coefficients: usize,
    pub status: CandidateStatus,
    pub log_likelihood: Option<f64>,
    pub score: Option<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    MaximumLikelihood,
    ReplicatedTwoStep,
}

/// Diagnostics of the two-step replicated fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicatedSummary {
    pub groups_used: usize,
    pub dropped_groups: Vec<u64>,
    /// Local moment fits that fell back to the least-squares shape match.
    pub approximate_local_fits: usize,
    /// Leave-one-out mean squared error of each λ regression (λ2 in log space).
    pub loo_mse: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlamMetadata {
    pub method: FitMethod,
    pub n_samples: usize,
    pub log_likelihood: f64,
    /// Log-likelihood of the constant-λ initialization.
    pub initial_log_likelihood: f64,
    pub selection: Selection,
    /// Index of the returned model in `candidates`.
    pub selected: usize,
    pub candidates: Vec<CandidateRecord>,
    /// Training points outside the predicted support of the final model;
    /// each contributes ln(1e-10) − d² (d in interquartile ranges).
    pub out_of_support_points: usize,
    pub invalid_candidates: usize,
    /// Box searched for (λ3, λ4) by the moment fit used at initialization.
    pub moment_fit_box: (f64, f64),
    /// Per-input range of the training design, for extrapolation checks.
    pub input_bounds: Vec<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicated: Option<ReplicatedSummary>,
    pub seed: u64,
}

/// A fitted generalized lambda model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlamModel {
    pub kind: String,
    pub version: u32,
    pub inputs: RandomVector,
    pub location: Expansion,
    /// Expansion of ln λ2.
    pub log_scale: Expansion,
    pub lower_shape: Expansion,
    pub upper_shape: Expansion,
    pub metadata: GlamMetadata,
}

/// Log-likelihood of one observation and its gradient with respect to
/// (λ1, ln λ2, λ3, λ4). `guess` carries the previous level for warm starts
/// and is updated in place. Returns (value, gradient, outside-support flag).
fn point_loglik(p: &GldParams, y: f64, guess: &mut f64) -> (f64, [f64; 4], bool) {
    let (l1, l2, l3, l4) = (p.location, p.scale, p.lower_shape, p.upper_shape);
    let inv = if *guess > 0.0 && *guess < 1.0 {
        p.invert_near(y, *guess)
    } else {
        p.invert(y, None)
    };
    match inv {
        Inversion::Inside(l) => {
            *guess = l.u;
            let ln_a = (l3 - 1.0) * l.ln_u;
            let ln_b = (l4 - 1.0) * l.ln_v;
            let m = ln_a.max(ln_b);
            let ln_s = m + ((ln_a - m).exp() + (ln_b - m).exp()).ln();
            let a = (ln_a - ln_s).exp();
            let b = (ln_b - ln_s).exp();
            let value = l2.ln() - ln_s;
            // κ = λ2 ∂/∂u[−ln S] / S, the implicit-level chain factor
            let kappa = l2
                * ((l3 - 1.0) * (ln_a - 2.0 * ln_s - l.ln_u).exp() - (l4 - 1.0) * (ln_b - 2.0 * ln_s - l.ln_v).exp());
            let g = [
                kappa,
                1.0 - kappa * (y - l1),
                -a * l.ln_u + kappa * box_cox_dlambda(l.ln_u, l3) / l2,
                -b * l.ln_v - kappa * box_cox_dlambda(l.ln_v, l4) / l2,
            ];
            (value, g, false)
        }
        side => {
            *guess = -1.0;
            let (lo, hi) = p.support();
            let below = side == Inversion::Below;
            if (below && lo.is_finite()) || (!below && hi.is_finite()) {
                let (lq, uq) = (0.25f64.ln(), 0.75f64.ln());
                let width = (box_cox(uq, l3) - box_cox(lq, l3)) + (box_cox(uq, l4) - box_cox(lq, l4));
                let w3 = box_cox_dlambda(uq, l3) - box_cox_dlambda(lq, l3);
                let w4 = box_cox_dlambda(uq, l4) - box_cox_dlambda(lq, l4);
                let (d, dd) = if below {
                    let d = ((l1 - y) * l2 - 1.0 / l3) / width;
                    (
                        d,
                        [
                            l2 / width,
                            (l1 - y) * l2 / width,
                            1.0 / (l3 * l3 * width) - d * w3 / width,
                            -d * w4 / width,
                        ],
                    )
                } else {
                    let d = ((y - l1) * l2 - 1.0 / l4) / width;
                    (
                        d,
                        [
                            -l2 / width,
                            (y - l1) * l2 / width,
                            -d * w3 / width,
                            1.0 / (l4 * l4 * width) - d * w4 / width,
                        ],
                    )
                };
                let d = d.max(0.0);
                (FLOOR_LN - d * d, dd.map(|v| -2.0 * d * v), true)
            } else {
                // beyond the representable tail of an unbounded side: score the
                // extreme level, holding it fixed
                let l = if below {
                    Level::from_u(f64::MIN_POSITIVE)
                } else {
                    Level::from_u(1.0 - f64::EPSILON / 2.0)
                };
                let ln_a = (l3 - 1.0) * l.ln_u;
                let ln_b = (l4 - 1.0) * l.ln_v;
                let m = ln_a.max(ln_b);
                let ln_s = m + ((ln_a - m).exp() + (ln_b - m).exp()).ln();
                let value = (l2.ln() - ln_s).max(FLOOR_LN);
                (value, [0.0, 1.0, 0.0, 0.0], true)
            }
        }
    }
}

/// Log-likelihood over a design with shared bases for (λ1, λ2) and (λ3, λ4).
struct Likelihood<'a> {
    d12: &'a DesignMatrix,
    d34: &'a DesignMatrix,
    y: &'a [f64],
    guess: Vec<f64>,
    lam: [Vec<f64>; 4],
    dl: [Vec<f64>; 4],
}

impl<'a> Likelihood<'a> {
    fn new(d12: &'a DesignMatrix, d34: &'a DesignMatrix, y: &'a [f64]) -> Self {
        let n = y.len();
        Self {
            d12,
            d34,
            y,
            guess: vec![-1.0; n],
            lam: std::array::from_fn(|_| vec![0.0; n]),
            dl: std::array::from_fn(|_| vec![0.0; n]),
        }
    }

    fn split<'t>(&self, theta: &'t [f64]) -> [&'t [f64]; 4] {
        let (p12, p34) = (self.d12.ncols(), self.d34.ncols());
        [
            &theta[..p12],
            &theta[p12..2 * p12],
            &theta[2 * p12..2 * p12 + p34],
            &theta[2 * p12 + p34..],
        ]
    }

    /// Total log-likelihood; fills `grad` (same layout as `theta`) when given.
    /// Returns NaN when some predicted parameter is not finite.
    fn eval(&mut self, theta: &[f64], grad: Option<&mut [f64]>) -> (f64, usize) {
        let c = self.split(theta);
        self.d12.mul_vec(c[0], &mut self.lam[0]);
        self.d12.mul_vec(c[1], &mut self.lam[1]);
        self.d34.mul_vec(c[2], &mut self.lam[2]);
        self.d34.mul_vec(c[3], &mut self.lam[3]);
        let mut total = 0.0;
        let mut outside = 0;
        for i in 0..self.y.len() {
            let p = GldParams {
                location: self.lam[0][i],
                scale: self.lam[1][i].exp(),
                lower_shape: self.lam[2][i],
                upper_shape: self.lam[3][i],
            };
            if !p.is_valid() {
                return (f64::NAN, 0);
            }
            let (v, g, out) = point_loglik(&p, self.y[i], &mut self.guess[i]);
            total += v;
            outside += usize::from(out);
            for k in 0..4 {
                self.dl[k][i] = g[k];
            }
        }
        if let Some(grad) = grad {
            grad.iter_mut().for_each(|v| *v = 0.0);
            let (p12, p34) = (self.d12.ncols(), self.d34.ncols());
            let (g1, rest) = grad.split_at_mut(p12);
            let (g2, rest) = rest.split_at_mut(p12);
            let (g3, g4) = rest.split_at_mut(p34);
            self.d12.add_transpose_mul(&self.dl[0], g1);
            self.d12.add_transpose_mul(&self.dl[1], g2);
            self.d34.add_transpose_mul(&self.dl[2], g3);
            self.d34.add_transpose_mul(&self.dl[3], g4);
        }
        (total, outside)
    }
}

/// Coefficients of a candidate in (standardized-response) fitting units.
#[derive(Clone, Debug)]
struct Solution {
    b12: BasisSpec,
    b34: BasisSpec,
    c: [Vec<f64>; 4],
}

impl Solution {
    /// Re-expresses the solution in the bases of another candidate,
    /// zero-filling new terms.
    fn embed(&self, b12: &BasisSpec, b34: &BasisSpec) -> Vec<f64> {
        let map = |from: &BasisSpec, c: &[f64], to: &BasisSpec| -> Vec<f64> {
            to.indices
                .iter()
                .map(|a| from.position(a).map_or(0.0, |k| c[k]))
                .collect()
        };
        let mut theta = map(&self.b12, &self.c[0], b12);
        theta.extend(map(&self.b12, &self.c[1], b12));
        theta.extend(map(&self.b34, &self.c[2], b34));
        theta.extend(map(&self.b34, &self.c[3], b34));
        theta
    }
}

fn unflatten(theta: &[f64], p12: usize, p34: usize) -> [Vec<f64>; 4] {
    [
        theta[..p12].to_vec(),
        theta[p12..2 * p12].to_vec(),
        theta[2 * p12..2 * p12 + p34].to_vec(),
        theta[2 * p12 + p34..].to_vec(),
    ]
}

struct CandidateFit {
    solution: Solution,
    log_likelihood: f64,
    iterations: usize,
    evaluations: usize,
    converged: bool,
    valid: bool,
}

/// Maximizes the likelihood from `start`, plus `restarts` perturbed starts.
fn optimize(
    d12: &DesignMatrix,
    d34: &DesignMatrix,
    y: &[f64],
    start: Vec<f64>,
    opts: &OptimizerSettings,
    seed: u64,
) -> (Vec<f64>, f64, usize, usize, bool) {
    let n = y.len() as f64;
    let lb = LbfgsOptions {
        max_iter: opts.max_iter,
        rel_tol: opts.rel_tol,
        grad_tol: 1e-8,
        ..LbfgsOptions::default()
    };
    let run = |x0: &[f64]| {
        let mut lik = Likelihood::new(d12, d34, y);
        lbfgs(
            |theta, g| {
                let (v, _) = lik.eval(theta, Some(g));
                g.iter_mut().for_each(|gi| *gi = -*gi / n);
                -v / n
            },
            x0,
            &lb,
        )
    };
    let mut best = run(&start);
    let mut iterations = best.iterations;
    let mut evaluations = best.evaluations;
    let mut r = rng::rng(seed);
    for _ in 0..opts.restarts {
        let mut x0 = best.x.clone();
        for v in x0.iter_mut() {
            let z: f64 = r.sample(StandardNormal);
            *v += 0.05 * z * v.abs().max(0.1);
        }
        let m = run(&x0);
        iterations += m.iterations;
        evaluations += m.evaluations;
        if m.value < best.value {
            best = m;
        }
    }
    let ll = -best.value * n;
    (best.x, ll, iterations, evaluations, best.converged)
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    p12: u32,
    p34: u32,
    q: f64,
}

struct Prepared<'a> {
    xs: &'a Matrix,
    y: &'a [f64],
    families: &'a [crate::pce::PolyFamily],
}

impl Prepared<'_> {
    fn fit(&self, cand: Candidate, start: &Solution, opts: &OptimizerSettings, seed: u64) -> Result<CandidateFit> {
        let b12 = BasisSpec::new(self.families.to_vec(), cand.p12, cand.q);
        let b34 = BasisSpec::new(self.families.to_vec(), cand.p34, cand.q);
        let d12 = b12.design_matrix(self.xs)?;
        let d34 = b34.design_matrix(self.xs)?;
        let theta0 = start.embed(&b12, &b34);
        let (theta, ll, iterations, evaluations, converged) = optimize(&d12, &d34, self.y, theta0, opts, seed);
        let (p12, p34) = (b12.len(), b34.len());
        let mut lik = Likelihood::new(&d12, &d34, self.y);
        let (check, _) = lik.eval(&theta, None);
        Ok(CandidateFit {
            solution: Solution {
                b12,
                b34,
                c: unflatten(&theta, p12, p34),
            },
            log_likelihood: ll,
            iterations,
            evaluations,
            converged,
            valid: check.is_finite(),
        })
    }

    fn held_out(&self, sol: &Solution, idx: &[usize]) -> Result<f64> {
        let xs = self.xs.select_rows(idx);
        let y: Vec<f64> = idx.iter().map(|&i| self.y[i]).collect();
        let d12 = sol.b12.design_matrix(&xs)?;
        let d34 = sol.b34.design_matrix(&xs)?;
        let theta: Vec<f64> = sol.c.concat();
        let mut lik = Likelihood::new(&d12, &d34, &y);
        Ok(lik.eval(&theta, None).0)
    }
}

pub(crate) fn response_scaling(y: &[f64]) -> Result<(f64, f64)> {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) || var.sqrt() <= 1e-14 * mean.abs() {
        return Err(Error::Degenerate("responses have zero variance".into()));
    }
    Ok((mean, var.sqrt()))
}

pub(crate) fn input_bounds(x: &Matrix) -> Vec<(f64, f64)> {
    (0..x.ncols())
        .map(|j| {
            x.rows()
                .map(|r| r[j])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        })
        .collect()
}

pub(crate) fn fold_indices(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::rng(seed));
    let mut out = vec![Vec::new(); folds];
    for (k, i) in idx.into_iter().enumerate() {
        out[k % folds].push(i);
    }
    out.iter_mut().for_each(|f| f.sort_unstable());
    out
}

/// Maximum-likelihood fit on replication-free data.
///
/// Candidates are the grid (p12, p34, q) from `config`. For each q and p34
/// the λ1/λ2 degree is raised from its minimum, each fit warm-started from
/// the previous (nested) one, so the likelihood of every candidate is at
/// least that of the constant-λ initialization. Candidates with
/// N < 10 × (largest expansion size) are skipped.
pub fn fit(inputs: &RandomVector, data: &Dataset, config: &GlamConfig) -> Result<GlamModel> {
    config.validate()?;
    if data.dim() != inputs.dim() {
        return Err(Error::DimensionMismatch {
            expected: inputs.dim(),
            got: data.dim(),
        });
    }
    if let Some(i) = data.y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: i,
            what: "response".into(),
        });
    }
    let n = data.len();
    let (shift, scale) = response_scaling(&data.y)?;
    let y: Vec<f64> = data.y.iter().map(|v| (v - shift) / scale).collect();
    let xs = inputs.standardize(&data.x)?;
    let families = inputs.polynomial_families();

    let init = gld::fit_moments(&y)?.params;
    let constant = Solution {
        b12: BasisSpec::new(families.clone(), 0, 1.0),
        b34: BasisSpec::new(families.clone(), 0, 1.0),
        c: [
            vec![init.location],
            vec![init.scale.ln()],
            vec![init.lower_shape],
            vec![init.upper_shape],
        ],
    };
    let prepared = Prepared {
        xs: &xs,
        y: &y,
        families: &families,
    };
    let init_ll = {
        let d = constant.b12.design_matrix(&xs)?;
        Likelihood::new(&d, &d, &y).eval(&constant.c.concat(), None).0
    };
    let ln_scale_total = n as f64 * scale.ln();

    let (p12_lo, p12_hi) = config.location_scale_degrees;
    let (p34_lo, p34_hi) = config.shape_degrees;
    let folds = match config.selection {
        Selection::CrossValidation { folds } => {
            Some(fold_indices(n, folds, rng::derive_seed(config.seed, "glam-folds", 0)))
        }
        Selection::Bic => None,
    };

    // one independent chain per q value
    let chains = crate::par::map(
        &config.q_grid,
        |&q| -> Result<Vec<(CandidateRecord, Option<Solution>)>> {
            let mut records = Vec::new();
            // fitted neighbours for warm starts, keyed by (p12, p34)
            let mut fitted_at: std::collections::HashMap<(u32, u32), (f64, Solution)> = Default::default();
            for p34 in p34_lo..=p34_hi {
                let mut best_score = f64::NEG_INFINITY;
                let mut worse = 0;
                for p12 in p12_lo..=p12_hi {
                    let cand = Candidate { p12, p34, q };
                    let size12 = crate::pce::generate_multi_indices(families.len(), p12, q).len();
                    let size34 = crate::pce::generate_multi_indices(families.len(), p34, q).len();
                    let mut rec = CandidateRecord {
                        location_scale_degree: p12,
                        shape_degree: p34,
                        q_norm: q,
                        n_coefficients: 2 * (size12 + size34),
                        status: CandidateStatus::Skipped,
                        log_likelihood: None,
                        score: None,
                        iterations: 0,
                        evaluations: 0,
                        converged: false,
                    };
                    if config.early_stop && worse >= 2 {
                        rec.status = CandidateStatus::NotReached;
                        records.push((rec, None));
                        continue;
                    }
                    if n < 10 * size12.max(size34) {
                        records.push((rec, None));
                        continue;
                    }
                    // both neighbours are nested in this candidate; take the likelier
                    let start = [
                        p12.checked_sub(1).map(|a| (a, p34)),
                        p34.checked_sub(1).map(|b| (p12, b)),
                    ]
                    .into_iter()
                    .flatten()
                    .filter_map(|k| fitted_at.get(&k))
                    .max_by(|a, b| a.0.total_cmp(&b.0))
                    .map_or(&constant, |(_, s)| s);
                    let seed = rng::derive_seed(
                        config.seed,
                        "glam-candidate",
                        u64::from(p12) * 1000 + u64::from(p34) + (q * 1e6) as u64,
                    );
                    let fitted = prepared.fit(cand, start, &config.optimizer, seed)?;
                    rec.iterations = fitted.iterations;
                    rec.evaluations = fitted.evaluations;
                    rec.converged = fitted.converged;
                    if !fitted.valid || !fitted.log_likelihood.is_finite() {
                        rec.status = CandidateStatus::Invalid;
                        records.push((rec, None));
                        continue;
                    }
                    let ll = fitted.log_likelihood - ln_scale_total;
                    let score = match &folds {
                        None => 2.0 * ll - rec.n_coefficients as f64 * (n as f64).ln(),
                        Some(folds) => {
                            let mut total = 0.0;
                            for (k, test) in folds.iter().enumerate() {
                                let train: Vec<usize> = folds
                                    .iter()
                                    .enumerate()
                                    .filter(|(j, _)| *j != k)
                                    .flat_map(|(_, f)| f.iter().copied())
                                    .collect();
                                let sub_x = xs.select_rows(&train);
                                let sub_y: Vec<f64> = train.iter().map(|&i| y[i]).collect();
                                let sub = Prepared {
                                    xs: &sub_x,
                                    y: &sub_y,
                                    families: &families,
                                };
                                let f = sub.fit(cand, &fitted.solution, &config.optimizer, seed)?;
                                total += prepared.held_out(&f.solution, test)? - test.len() as f64 * scale.ln();
                            }
                            total / n as f64
                        }
                    };
                    rec.status = CandidateStatus::Fitted;
                    rec.log_likelihood = Some(ll);
                    rec.score = Some(score);
                    if score > best_score {
                        best_score = score;
                        worse = 0;
                    } else {
                        worse += 1;
                    }
                    fitted_at.insert((p12, p34), (ll, fitted.solution.clone()));
                    records.push((rec, Some(fitted.solution)));
                }
            }
            Ok(records)
        },
    );
    let mut records = Vec::new();
    let mut solutions = Vec::new();
    for chain in chains {
        for (rec, sol) in chain? {
            records.push(rec);
            solutions.push(sol);
        }
    }
    let invalid = records.iter().filter(|r| r.status == CandidateStatus::Invalid).count();
    let selected = records
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.score.map(|s| (i, s)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    let Some(selected) = selected else {
        if records.iter().all(|r| r.status == CandidateStatus::Skipped) {
            return Err(Error::Precondition(format!(
                "N = {n} is below 10 × the smallest candidate basis size"
            )));
        }
        return Err(Error::FitFailed(format!(
            "no candidate produced a valid model ({invalid} invalid of {})",
            records.len()
        )));
    };
    let sol = solutions[selected].take().expect("selected candidate has a solution");
    let ll = records[selected].log_likelihood.expect("fitted");
    let out_of_support = {
        let d12 = sol.b12.design_matrix(&xs)?;
        let d34 = sol.b34.design_matrix(&xs)?;
        Likelihood::new(&d12, &d34, &y).eval(&sol.c.concat(), None).1
    };
    if ll < init_ll - ln_scale_total - 1e-6 * init_ll.abs().max(1.0) {
        return Err(Error::FitFailed(format!(
            "selected candidate did not improve on the initialization ({ll} < {})",
            init_ll - ln_scale_total
        )));
    }

    // back to response units: y = shift + scale·ỹ
    let mut c = sol.c;
    c[0].iter_mut().for_each(|v| *v *= scale);
    c[0][0] += shift;
    c[1][0] -= scale.ln();
    let [c1, c2, c3, c4] = c;
    Ok(GlamModel {
        kind: MODEL_KIND.into(),
        version: MODEL_VERSION,
        inputs: inputs.clone(),
        location: Expansion {
            basis: sol.b12.clone(),
            coefficients: c1,
        },
        log_scale: Expansion {
            basis: sol.b12,
            coefficients: c2,
        },
        lower_shape: Expansion {
            basis: sol.b34.clone(),
            coefficients: c3,
        },
        upper_shape: Expansion {
            basis: sol.b34,
            coefficients: c4,
        },
        metadata: GlamMetadata {
            method: FitMethod::MaximumLikelihood,
            n_samples: n,
            log_likelihood: ll,
            initial_log_likelihood: init_ll - ln_scale_total,
            selection: config.selection,
            selected,
            candidates: records,
            out_of_support_points: out_of_support,
            invalid_candidates: invalid,
            moment_fit_box: gld::MOMENT_FIT_BOX,
            input_bounds: input_bounds(&data.x),
            replicated: None,
            seed: config.seed,
        },
    })
}

/// Two-step fit on replicated data: a moment-matched GLD per replication
/// group, then a least-squares PCE for each λ (λ2 in log space). For each λ
/// the (degree, q) pair with the smallest leave-one-out error is kept, with
/// degrees from the same ranges as [`fit`].
pub fn fit_replicated(inputs: &RandomVector, data: &Dataset, config: &GlamConfig) -> Result<GlamModel> {
    config.validate()?;
    if data.dim() != inputs.dim() {
        return Err(Error::DimensionMismatch {
            expected: inputs.dim(),
            got: data.dim(),
        });
    }
    let groups = data
        .group_rows()
        .ok_or_else(|| Error::Precondition("replicated fit needs group ids".into()))?;
    if let Some((g, rows)) = groups.iter().find(|(_, r)| r.len() < 8) {
        return Err(Error::Precondition(format!(
            "group {g} has {} replications; at least 8 are required",
            rows.len()
        )));
    }
    let mut xs_rows = Vec::new();
    let mut params: Vec<GldParams> = Vec::new();
    let mut dropped = Vec::new();
    let mut approximate = 0;
    for (g, rows) in &groups {
        let ys: Vec<f64> = rows.iter().map(|&i| data.y[i]).collect();
        match gld::fit_moments(&ys) {
            Ok(f) => {
                approximate += usize::from(!f.exact);
                xs_rows.push(data.x.row(rows[0]).to_vec());
                params.push(f.params);
            }
            Err(Error::Degenerate(_)) => dropped.push(*g),
            Err(e) => return Err(e),
        }
    }
    if dropped.len() * 5 > groups.len() {
        return Err(Error::FitFailed(format!(
            "{} of {} replication groups have degenerate responses",
            dropped.len(),
            groups.len()
        )));
    }
    let x = Matrix::from_rows(&xs_rows);
    let xs = inputs.standardize(&x)?;
    let families = inputs.polynomial_families();
    let targets: [Vec<f64>; 4] = [
        params.iter().map(|p| p.location).collect(),
        params.iter().map(|p| p.scale.ln()).collect(),
        params.iter().map(|p| p.lower_shape).collect(),
        params.iter().map(|p| p.upper_shape).collect(),
    ];
    let mut expansions: Vec<Expansion> = Vec::with_capacity(4);
    let mut loo = [0.0; 4];
    for (l, target) in targets.iter().enumerate() {
        let (lo, hi) = if l < 2 {
            config.location_scale_degrees
        } else {
            config.shape_degrees
        };
        let mut best: Option<(f64, Expansion)> = None;
        for &q in &config.q_grid {
            for p in lo..=hi {
                let basis = BasisSpec::new(families.clone(), p, q);
                if basis.len() >= xs.nrows() {
                    continue;
                }
                let design = basis.design_matrix(&xs)?;
                let Ok(ls) = least_squares(&design.0, target) else {
                    continue;
                };
                let err = ls.loo_mse();
                if best.as_ref().is_none_or(|(e, _)| err < *e) {
                    best = Some((
                        err,
                        Expansion {
                            basis,
                            coefficients: ls.coefficients,
                        },
                    ));
                }
            }
        }
        let (err, exp) = match best {
            Some(b) => b,
            None => {
                // fewer points than any basis: fall back to the mean
                let m = target.iter().sum::<f64>() / target.len() as f64;
                let v = target.iter().map(|t| (t - m).powi(2)).sum::<f64>() / target.len() as f64;
                (v, Expansion::constant(&families, m))
            }
        };
        loo[l] = err;
        expansions.push(exp);
    }
    let [location, log_scale, lower_shape, upper_shape]: [Expansion; 4] =
        expansions.try_into().expect("four expansions");
    let mut model = GlamModel {
        kind: MODEL_KIND.into(),
        version: MODEL_VERSION,
        inputs: inputs.clone(),
        location,
        log_scale,
        lower_shape,
        upper_shape,
        metadata: GlamMetadata {
            method: FitMethod::ReplicatedTwoStep,
            n_samples: data.len(),
            log_likelihood: 0.0,
            initial_log_likelihood: 0.0,
            selection: config.selection,
            selected: 0,
            candidates: Vec::new(),
            out_of_support_points: 0,
            invalid_candidates: 0,
            moment_fit_box: gld::MOMENT_FIT_BOX,
            input_bounds: input_bounds(&data.x),
            replicated: Some(ReplicatedSummary {
                groups_used: params.len(),
                dropped_groups: dropped,
                approximate_local_fits: approximate,
                loo_mse: loo,
            }),
            seed: config.seed,
        },
    };
    let (ll, out) = model.log_likelihood(data)?;
    model.metadata.log_likelihood = ll;
    model.metadata.out_of_support_points = out;
    Ok(model)
}

/// Reusable per-thread evaluation buffers for a model.
pub struct Predictor<'m> {
    model: &'m GlamModel,
    evaluators: [Evaluator<'m>; 4],
    std: Vec<f64>,
    psi: [Vec<f64>; 4],
}

impl<'m> Predictor<'m> {
    pub fn new(model: &'m GlamModel) -> Self {
        let exps = model.expansions();
        Self {
            model,
            evaluators: exps.map(|e| Evaluator::new(&e.basis)),
            std: vec![0.0; model.inputs.dim()],
            psi: exps.map(|e| vec![0.0; e.basis.len()]),
        }
    }

    /// λ(x). The point is assumed to have the model's input dimension.
    pub fn lambda(&mut self, x: &[f64]) -> GldParams {
        self.model.inputs.to_standard(x, &mut self.std);
        let exps = self.model.expansions();
        let mut v = [0.0; 4];
        for k in 0..4 {
            self.evaluators[k].eval_into(&self.std, &mut self.psi[k]);
            v[k] = crate::pce::basis::dot(&self.psi[k], &exps[k].coefficients);
        }
        GldParams {
            location: v[0],
            scale: v[1].exp(),
            lower_shape: v[2],
            upper_shape: v[3],
        }
    }

    pub fn conditional_pf(&mut self, x: &[f64]) -> f64 {
        self.lambda(x).cdf(0.0)
    }
}

impl GlamModel {
    /// The four expansions in λ order (λ2 in log space).
    pub fn expansions(&self) -> [&Expansion; 4] {
        [&self.location, &self.log_scale, &self.lower_shape, &self.upper_shape]
    }

    /// Model with constant expansions: λ(x) = (c1, exp(c2), c3, c4) everywhere.
    pub fn constant(inputs: RandomVector, c: [f64; 4]) -> Self {
        let fam = inputs.polynomial_families();
        Self {
            kind: MODEL_KIND.into(),
            version: MODEL_VERSION,
            location: Expansion::constant(&fam, c[0]),
            log_scale: Expansion::constant(&fam, c[1]),
            lower_shape: Expansion::constant(&fam, c[2]),
            upper_shape: Expansion::constant(&fam, c[3]),
            metadata: GlamMetadata {
                method: FitMethod::MaximumLikelihood,
                n_samples: 0,
                log_likelihood: 0.0,
                initial_log_likelihood: 0.0,
                selection: Selection::Bic,
                selected: 0,
                candidates: Vec::new(),
                out_of_support_points: 0,
                invalid_candidates: 0,
                moment_fit_box: gld::MOMENT_FIT_BOX,
                input_bounds: Vec::new(),
                replicated: None,
                seed: 0,
            },
            inputs,
        }
    }

    pub fn dim(&self) -> usize {
        self.inputs.dim()
    }

    /// GLD parameters at x.
    pub fn lambda(&self, x: &[f64]) -> Result<GldParams> {
        self.inputs.check_dim(x)?;
        Ok(Predictor::new(self).lambda(x))
    }

    /// True when x lies outside the bounding box of the training design.
    pub fn is_extrapolating(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.metadata.input_bounds)
            .any(|(v, (lo, hi))| v < lo || v > hi)
    }

    /// s(x) = P(Y ≤ 0 | x) by numerical inversion of the predicted quantile.
    pub fn conditional_pf(&self, x: &[f64]) -> Result<f64> {
        Ok(self.lambda(x)?.cdf(0.0))
    }

    pub fn quantile(&self, x: &[f64], alpha: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Domain(format!("quantile level must lie in (0,1), got {alpha}")));
        }
        self.lambda(x)?.quantile(alpha)
    }

    pub fn sample(&self, x: &[f64], n: usize, seed: u64) -> Result<Vec<f64>> {
        Ok(self.lambda(x)?.sample(n, seed))
    }

    /// Log-likelihood of a dataset (with the out-of-support floor) and the
    /// number of floored points.
    pub fn log_likelihood(&self, data: &Dataset) -> Result<(f64, usize)> {
        if data.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: data.dim(),
            });
        }
        let mut pred = Predictor::new(self);
        let mut total = 0.0;
        let mut out = 0;
        for (row, &y) in data.x.rows().zip(&data.y) {
            let p = pred.lambda(row);
            let (v, _, o) = point_loglik(&p, y, &mut -1.0);
            total += v;
            out += usize::from(o);
        }
        Ok((total, out))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        m.check()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn check(&self) -> Result<()> {
        if self.kind != MODEL_KIND {
            return Err(Error::Unsupported(format!(
                "model kind `{}` is not `{MODEL_KIND}`",
                self.kind
            )));
        }
        if self.version != MODEL_VERSION {
            return Err(Error::Unsupported(format!(
                "GLaM model version {} (supported: {MODEL_VERSION})",
                self.version
            )));
        }
        for e in self.expansions() {
            if e.coefficients.len() != e.basis.len() {
                return Err(Error::Precondition("coefficient count differs from basis size".into()));
            }
            if e.basis.dim() != self.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.dim(),
                    got: e.basis.dim(),
                });
            }
        }
        Ok(())
    }

    /// Indices of the expansion terms (for reporting).
    pub fn multi_indices(&self) -> [&[MultiIndex]; 4] {
        self.expansions().map(|e| e.basis.indices.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inputs::Marginal;

    fn uniform_inputs() -> RandomVector {
        RandomVector::unnamed(vec![Marginal::uniform(0.0, 1.0).unwrap()]).unwrap()
    }

    #[test]
    fn constant_model_predicts_constant_parameters() {
        let m = GlamModel::constant(uniform_inputs(), [0.5, 0.0, 1.0, 1.0]);
        for &x in &[0.1, 0.7] {
            let p = m.lambda(&[x]).unwrap();
            assert_eq!(p.to_array(), [0.5, 1.0, 1.0, 1.0]);
            // uniform on (−0.5, 1.5)
            assert!((m.conditional_pf(&[x]).unwrap() - 0.25).abs() < 1e-12);
        }
        let pos = GlamModel::constant(uniform_inputs(), [5.0, 0.0, 1.0, 1.0]);
        assert_eq!(pos.conditional_pf(&[0.5]).unwrap(), 0.0);
        let neg = GlamModel::constant(uniform_inputs(), [-5.0, 0.0, 1.0, 1.0]);
        assert_eq!(neg.conditional_pf(&[0.5]).unwrap(), 1.0);
        assert!(m.lambda(&[0.1, 0.2]).is_err());
    }

    #[test]
    fn symmetric_median_is_location() {
        let m = GlamModel::constant(uniform_inputs(), [2.0, 0.3, 0.2, 0.2]);
        assert!((m.quantile(&[0.3], 0.5).unwrap() - 2.0).abs() < 1e-14);
        assert!(m.quantile(&[0.3], 1.0).is_err());
    }

    fn fd_check(p: GldParams, y: f64) {
        let (_, g, _) = point_loglik(&p, y, &mut -1.0);
        let base = [p.location, p.scale.ln(), p.lower_shape, p.upper_shape];
        for k in 0..4 {
            let h = 1e-6;
            let at = |d: f64| {
                let mut v = base;
                v[k] += d;
                let q = GldParams {
                    location: v[0],
                    scale: v[1].exp(),
                    lower_shape: v[2],
                    upper_shape: v[3],
                };
                point_loglik(&q, y, &mut -1.0).0
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            assert!(
                (fd - g[k]).abs() <= 1e-5 * fd.abs().max(1.0),
                "k={k} p={p:?} y={y}: fd {fd} vs analytic {}",
                g[k]
            );
        }
    }

    #[test]
    fn point_gradient_matches_finite_differences() {
        let cases = [
            (GldParams::new(0.2, 1.3, 0.15, 0.4).unwrap(), 0.7),
            (GldParams::new(0.2, 1.3, -0.1, 0.05).unwrap(), -3.0),
            (GldParams::new(0.0, 0.7, 0.5, -0.2).unwrap(), 4.0),
            (GldParams::new(1.0, 2.0, 0.0, 0.3).unwrap(), 1.1),
            // outside the support: penalty branch
            (GldParams::new(0.0, 1.0, 1.0, 1.0).unwrap(), 1.5),
            (GldParams::new(0.0, 1.0, 0.8, 0.6).unwrap(), -2.0),
        ];
        for (p, y) in cases {
            fd_check(p, y);
        }
    }

    #[test]
    fn floor_applies_outside_support() {
        let p = GldParams::new(0.0, 1.0, 1.0, 1.0).unwrap();
        let (v, _, out) = point_loglik(&p, 1.0 + 1.0, &mut -1.0);
        // IQR of uniform(−1, 1) is 1, distance 1
        assert!(out);
        assert!((v - (FLOOR_LN - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn model_json_round_trip_is_exact() {
        let mut m = GlamModel::constant(uniform_inputs(), [0.1 + 0.2, -1.0 / 3.0, 0.123456789012345, 1e-17]);
        m.metadata.input_bounds = vec![(0.0, 1.0)];
        let back = GlamModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        for (a, b) in back.expansions().iter().zip(m.expansions()) {
            for (x, y) in a.coefficients.iter().zip(&b.coefficients) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn rejects_wrong_version() {
        let m = GlamModel::constant(uniform_inputs(), [0.0, 0.0, 0.1, 0.1]);
        let s = m.to_json().unwrap().replace("\"version\": 1", "\"version\": 99");
        assert!(matches!(GlamModel::from_json(&s), Err(Error::Unsupported(_))));
    }
}
