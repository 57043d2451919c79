//! Stochastic polynomial chaos expansions (SPCE).
//!
//! The response at input x is represented as
//!
//! ```text
//! Y(x) = Σ cα ψα(x, Z) + ε,   Z ~ latent law,  ε ~ N(0, σ²)
//! ```
//!
//! with a single latent variable Z. The conditional density is the
//! convolution of the PCE push-forward of Z with the Gaussian noise; it is
//! evaluated with an N_Q-point Gauss rule in z, which turns it into a
//! mixture of N_Q Gaussians. Coefficients are fitted by maximizing that
//! mixture likelihood; σ is chosen by k-fold cross-validation.

use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{invalid, Error, Result};
use crate::glam::{fold_indices, input_bounds, response_scaling, OptimizerSettings, Selection};
use crate::inputs::RandomVector;
use crate::matrix::{least_squares, Matrix};
use crate::normal;
use crate::optim::{lbfgs, LbfgsOptions};
use crate::pce::{gauss_nodes, BasisSpec, DesignMatrix, MultiIndex, PolyFamily};
use crate::rng;

pub const MODEL_KIND: &str = "spce";
pub const MODEL_VERSION: u32 = 1;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Distribution of the latent variable.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentFamily {
    /// Z ~ N(0, 1), Hermite polynomials.
    #[default]
    Gaussian,
    /// Z ~ U(−1, 1), Legendre polynomials.
    Uniform,
}

impl LatentFamily {
    pub fn polynomial_family(self) -> PolyFamily {
        match self {
            LatentFamily::Gaussian => PolyFamily::Hermite,
            LatentFamily::Uniform => PolyFamily::Legendre,
        }
    }

    fn sample<R: rand::Rng + ?Sized>(self, r: &mut R) -> f64 {
        match self {
            LatentFamily::Gaussian => r.sample(StandardNormal),
            LatentFamily::Uniform => 2.0 * rng::open01(r) - 1.0,
        }
    }
}

/// Geometric grid of candidate noise levels, relative to the response
/// standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SigmaGrid {
    pub points: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

impl Default for SigmaGrid {
    fn default() -> Self {
        Self {
            points: 10,
            min_ratio: 0.02,
            max_ratio: 1.0,
        }
    }
}

impl SigmaGrid {
    /// Grid values in units of std(y), increasing.
    pub fn ratios(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.max_ratio];
        }
        let (a, b) = (self.min_ratio.ln(), self.max_ratio.ln());
        (0..self.points)
            .map(|i| (a + (b - a) * i as f64 / (self.points - 1) as f64).exp())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpceConfig {
    /// Inclusive total-degree range over (x, z).
    pub degrees: (u32, u32),
    pub q_grid: Vec<f64>,
    pub latent: LatentFamily,
    pub sigma_grid: SigmaGrid,
    /// Folds of the σ cross-validation.
    pub folds: usize,
    pub quadrature_order: usize,
    /// Basis selection rule. With cross-validation the score of a basis is
    /// the held-out log-likelihood at its best σ, so the fold count must
    /// equal `folds`.
    pub selection: Selection,
    pub optimizer: OptimizerSettings,
    /// Stop raising the degree after two consecutive candidates fail to
    /// improve the score.
    pub early_stop: bool,
    pub seed: u64,
}

impl Default for SpceConfig {
    fn default() -> Self {
        Self {
            degrees: (0, 4),
            q_grid: vec![0.7, 0.8, 0.9, 1.0],
            latent: LatentFamily::Gaussian,
            sigma_grid: SigmaGrid::default(),
            folds: 5,
            quadrature_order: 100,
            selection: Selection::Bic,
            optimizer: OptimizerSettings::default(),
            early_stop: true,
            seed: 0,
        }
    }
}

impl SpceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.degrees.0 > self.degrees.1 {
            return Err(invalid("degrees", "range minimum exceeds maximum"));
        }
        if self.q_grid.is_empty() || self.q_grid.iter().any(|q| !(*q > 0.0 && *q <= 1.0)) {
            return Err(invalid("q_grid", "values must lie in (0, 1]"));
        }
        let g = &self.sigma_grid;
        if g.points == 0 || !(g.min_ratio > 0.0 && g.min_ratio <= g.max_ratio && g.max_ratio.is_finite()) {
            return Err(invalid("sigma_grid", "need points ≥ 1 and 0 < min_ratio ≤ max_ratio"));
        }
        if self.folds < 2 {
            return Err(invalid("folds", "need at least 2 folds"));
        }
        if self.quadrature_order < 3 {
            return Err(invalid("quadrature_order", "must be at least 3"));
        }
        if let Selection::CrossValidation { folds } = self.selection {
            if folds != self.folds {
                return Err(invalid("selection", "cross-validation folds must equal `folds`"));
            }
        }
        if self.optimizer.max_iter == 0 {
            return Err(invalid("max_iter", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpceCandidateStatus {
    Fitted,
    /// Too few samples for the basis size (N < 10 P).
    Skipped,
    /// Every σ gave a non-finite held-out score.
    Invalid,
    /// Not reached because of early stopping.
    NotReached,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpceCandidateRecord {
    pub degree: u32,
    pub q_norm: f64,
    pub n_coefficients: usize,
    pub status: SpceCandidateStatus,
    /// Mean held-out log-likelihood per point for each σ of the grid;
    /// `None` where it was not finite.
    pub cv_scores: Vec<Option<f64>>,
    /// Winning σ (response units).
    pub sigma: Option<f64>,
    /// Full-data log-likelihood at the winning σ.
    pub log_likelihood: Option<f64>,
    pub score: Option<f64>,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpceMetadata {
    pub n_samples: usize,
    pub log_likelihood: f64,
    /// Log-likelihood of the least-squares initialization at the selected σ.
    pub initial_log_likelihood: f64,
    /// σ grid in response units.
    pub sigma_grid: Vec<f64>,
    /// Cross-validation scores of the selected basis, one per σ.
    pub cv_scores: Vec<Option<f64>>,
    pub selection: Selection,
    /// Index of the returned model in `candidates`.
    pub selected: usize,
    pub candidates: Vec<SpceCandidateRecord>,
    /// No basis term depends on the latent variable.
    pub deterministic_in_latent: bool,
    pub input_bounds: Vec<(f64, f64)>,
    pub seed: u64,
}

/// A fitted stochastic polynomial chaos expansion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpceModel {
    pub kind: String,
    pub version: u32,
    pub inputs: RandomVector,
    pub latent: LatentFamily,
    /// Basis over (x₁, …, x_M, z); the latent coordinate is last.
    pub basis: BasisSpec,
    pub coefficients: Vec<f64>,
    pub sigma: f64,
    pub quadrature_order: usize,
    pub metadata: SpceMetadata,
}

/// Splits a basis over (x, z) into its x part (possibly with repeated
/// indices) and the latent degree of each term.
fn split_basis(basis: &BasisSpec) -> (BasisSpec, Vec<usize>) {
    let m = basis.dim() - 1;
    let indices: Vec<MultiIndex> = basis.indices.iter().map(|a| MultiIndex(a.0[..m].to_vec())).collect();
    let latent = basis.indices.iter().map(|a| a.0[m] as usize).collect();
    (
        BasisSpec {
            families: basis.families[..m].to_vec(),
            degree: basis.degree,
            q_norm: basis.q_norm,
            indices,
        },
        latent,
    )
}

/// Latent polynomials at the quadrature nodes, row-major (node, degree),
/// and log weights.
fn latent_table(family: LatentFamily, n_q: usize, k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let rule = gauss_nodes(family.polynomial_family(), n_q)?;
    let mut table = vec![0.0; n_q * k];
    for (j, &z) in rule.nodes.iter().enumerate() {
        family.polynomial_family().eval_all(z, &mut table[j * k..(j + 1) * k]);
    }
    Ok((table, rule.weights.iter().map(|w| w.ln()).collect()))
}

/// Mixture terms below exp(-50) of the largest contribute less than 1e-19
/// relative to the sum over 100 nodes and are skipped.
const NEGLIGIBLE_LOG_WEIGHT: f64 = -50.0;

/// Quadrature mixture likelihood of a fixed basis on fixed data.
struct Mixture<'a> {
    psi: &'a DesignMatrix,
    latent: &'a [usize],
    table: &'a [f64],
    ln_w: &'a [f64],
    k: usize,
    y: &'a [f64],
    // scratch
    a: Vec<f64>,
    b: Vec<f64>,
    t: Vec<f64>,
    r: Vec<f64>,
}

impl<'a> Mixture<'a> {
    fn new(
        psi: &'a DesignMatrix,
        latent: &'a [usize],
        table: &'a [f64],
        ln_w: &'a [f64],
        k: usize,
        y: &'a [f64],
    ) -> Self {
        let n_q = ln_w.len();
        Self {
            psi,
            latent,
            table,
            ln_w,
            k,
            y,
            a: vec![0.0; k],
            b: vec![0.0; k],
            t: vec![0.0; n_q],
            r: vec![0.0; n_q],
        }
    }

    /// Σᵢ ln f̃(yᵢ | xᵢ) and, optionally, its gradient in c.
    fn eval(&mut self, c: &[f64], sigma: f64, mut grad: Option<&mut [f64]>) -> f64 {
        let k = self.k;
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let ln_sigma = sigma.ln();
        let mut total = 0.0;
        for (i, &y) in self.y.iter().enumerate() {
            let row = self.psi.row(i);
            self.a.iter_mut().for_each(|v| *v = 0.0);
            for ((&ci, &p), &l) in c.iter().zip(row).zip(self.latent) {
                self.a[l] += ci * p;
            }
            let mut tmax = f64::NEG_INFINITY;
            for (j, (t, r)) in self.t.iter_mut().zip(self.r.iter_mut()).enumerate() {
                let lat = &self.table[j * k..(j + 1) * k];
                let m: f64 = self.a.iter().zip(lat).map(|(a, l)| a * l).sum();
                *r = (y - m) / sigma;
                *t = self.ln_w[j] - 0.5 * *r * *r;
                tmax = tmax.max(*t);
            }
            let mut s = 0.0;
            for t in self.t.iter_mut() {
                // nodes this far below the peak cannot move the sum
                *t = if *t - tmax < NEGLIGIBLE_LOG_WEIGHT {
                    0.0
                } else {
                    (*t - tmax).exp()
                };
                s += *t;
            }
            total += tmax + s.ln() - ln_sigma - LN_SQRT_2PI;
            if let Some(g) = grad.as_deref_mut() {
                self.b.iter_mut().for_each(|v| *v = 0.0);
                let inv = 1.0 / (s * sigma);
                for (j, (&t, &r)) in self.t.iter().zip(&self.r).enumerate() {
                    let f = t * r * inv;
                    if f != 0.0 {
                        let lat = &self.table[j * k..(j + 1) * k];
                        for (b, l) in self.b.iter_mut().zip(lat) {
                            *b += f * l;
                        }
                    }
                }
                for ((gi, &p), &l) in g.iter_mut().zip(row).zip(self.latent) {
                    *gi += self.b[l] * p;
                }
            }
        }
        total
    }
}

/// Shared, per-candidate fitting context (standardized response).
struct Problem<'a> {
    psi: DesignMatrix,
    latent: &'a [usize],
    table: &'a [f64],
    ln_w: &'a [f64],
    k: usize,
    y: Vec<f64>,
}

impl Problem<'_> {
    fn mixture(&self) -> Mixture<'_> {
        Mixture::new(&self.psi, self.latent, self.table, self.ln_w, self.k, &self.y)
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self {
            psi: self.psi.select_rows(idx),
            latent: self.latent,
            table: self.table,
            ln_w: self.ln_w,
            k: self.k,
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    /// Least-squares fit of the latent-free terms; the first-order pure
    /// latent term takes the residual spread not explained by σ, the other
    /// latent-coupled terms a small jitter.
    fn initial(&self, sigma: f64, seed: u64) -> Result<Vec<f64>> {
        let cols: Vec<usize> = (0..self.latent.len()).filter(|&a| self.latent[a] == 0).collect();
        let n = self.y.len();
        let mut data = Vec::with_capacity(n * cols.len());
        for i in 0..n {
            let row = self.psi.row(i);
            data.extend(cols.iter().map(|&a| row[a]));
        }
        let ls = least_squares(&Matrix::from_vec(n, cols.len(), data), &self.y)?;
        let resid_var = ls.residuals.iter().map(|r| r * r).sum::<f64>() / n as f64;
        let mut c = vec![0.0; self.latent.len()];
        for (&a, v) in cols.iter().zip(&ls.coefficients) {
            c[a] = *v;
        }
        let mut r = rng::rng(seed);
        let spread = (resid_var - sigma * sigma).max(0.01 * resid_var).sqrt();
        for (a, ca) in c.iter_mut().enumerate() {
            if self.latent[a] == 0 {
                continue;
            }
            let pure_linear = self.latent[a] == 1 && self.psi_is_constant(a);
            *ca = if pure_linear {
                spread
            } else {
                let z: f64 = r.sample(StandardNormal);
                1e-3 * z
            };
        }
        Ok(c)
    }

    fn psi_is_constant(&self, a: usize) -> bool {
        (0..self.y.len().min(8)).all(|i| self.psi.row(i)[a] == 1.0)
    }

    /// Maximizes the likelihood at fixed σ from `start`. Returns
    /// (c, log-likelihood, iterations).
    fn maximize(&self, start: &[f64], sigma: f64, opts: &OptimizerSettings) -> (Vec<f64>, f64, usize) {
        let n = self.y.len() as f64;
        let mut mix = self.mixture();
        let lb = LbfgsOptions {
            max_iter: opts.max_iter,
            rel_tol: opts.rel_tol,
            grad_tol: 1e-8,
            ..LbfgsOptions::default()
        };
        let m = lbfgs(
            |c, g| {
                let v = mix.eval(c, sigma, Some(g));
                g.iter_mut().for_each(|gi| *gi = -*gi / n);
                -v / n
            },
            start,
            &lb,
        );
        (m.x, -m.value * n, m.iterations)
    }
}

/// Result of the σ cross-validation of one basis.
struct CvOutcome {
    scores: Vec<f64>,
    best: usize,
    /// Fold-0 solution at each σ, used to warm-start the full-data refit.
    warm: Vec<Vec<f64>>,
    iterations: usize,
}

fn cross_validate(
    problem: &Problem,
    folds: &[Vec<usize>],
    sigmas: &[f64],
    opts: &OptimizerSettings,
    seed: u64,
) -> Result<CvOutcome> {
    let n = problem.y.len();
    let per_fold = crate::par::map(
        &(0..folds.len()).collect::<Vec<_>>(),
        |&f| -> Result<(Vec<f64>, Vec<Vec<f64>>, usize)> {
            let train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != f)
                .flat_map(|(_, idx)| idx.iter().copied())
                .collect();
            let tr = problem.subset(&train);
            let te = problem.subset(&folds[f]);
            let mut held = vec![f64::NEG_INFINITY; sigmas.len()];
            let mut sols = vec![Vec::new(); sigmas.len()];
            let mut iters = 0;
            // continuation from the smallest σ up: the latent terms start
            // large and shrink as the noise takes over
            let mut c = tr.initial(sigmas[0], rng::derive_seed(seed, "spce-init", f as u64))?;
            for s in 0..sigmas.len() {
                let (sol, _, it) = tr.maximize(&c, sigmas[s], opts);
                iters += it;
                let v = te.mixture().eval(&sol, sigmas[s], None);
                held[s] = if v.is_finite() { v } else { f64::NEG_INFINITY };
                c.clone_from(&sol);
                sols[s] = sol;
            }
            Ok((held, sols, iters))
        },
    );
    let mut scores = vec![0.0; sigmas.len()];
    let mut warm = Vec::new();
    let mut iterations = 0;
    for (f, r) in per_fold.into_iter().enumerate() {
        let (held, sols, it) = r?;
        for (s, h) in scores.iter_mut().zip(&held) {
            *s += h;
        }
        if f == 0 {
            warm = sols;
        }
        iterations += it;
    }
    scores.iter_mut().for_each(|s| *s /= n as f64);
    let best = scores
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_finite())
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map_or(usize::MAX, |(i, _)| i);
    Ok(CvOutcome {
        scores,
        best,
        warm,
        iterations,
    })
}

struct Fitted {
    basis: BasisSpec,
    c: Vec<f64>,
    sigma: f64,
    initial_ll: f64,
}

struct FitContext<'a> {
    xs: &'a Matrix,
    y: &'a [f64],
    ln_w: &'a [f64],
    folds: &'a [Vec<usize>],
    ratios: &'a [f64],
    config: &'a SpceConfig,
    scale: f64,
}

impl FitContext<'_> {
    fn record(&self, basis: &BasisSpec, status: SpceCandidateStatus) -> SpceCandidateRecord {
        SpceCandidateRecord {
            degree: basis.degree,
            q_norm: basis.q_norm,
            n_coefficients: basis.len(),
            status,
            cv_scores: Vec::new(),
            sigma: None,
            log_likelihood: None,
            score: None,
            iterations: 0,
        }
    }

    /// σ cross-validation, then the full-data refit at the winning σ.
    fn fit_candidate(&self, basis: BasisSpec) -> Result<(SpceCandidateRecord, Option<Fitted>)> {
        let mut rec = self.record(&basis, SpceCandidateStatus::Invalid);
        let n = self.y.len();
        let (xbasis, latent) = split_basis(&basis);
        // only the latent degrees this basis uses
        let k = latent.iter().max().map_or(1, |d| d + 1);
        let (table, _) = latent_table(self.config.latent, self.config.quadrature_order, k)?;
        let problem = Problem {
            psi: xbasis.design_matrix(self.xs)?,
            latent: &latent,
            table: &table,
            ln_w: self.ln_w,
            k,
            y: self.y.to_vec(),
        };
        let seed = rng::derive_seed(self.config.seed, "spce-candidate", basis.len() as u64);
        let cv = match cross_validate(&problem, self.folds, self.ratios, &self.config.optimizer, seed) {
            Ok(cv) => cv,
            Err(Error::Degenerate(_)) => return Ok((rec, None)),
            Err(e) => return Err(e),
        };
        let ln_scale = self.scale.ln();
        rec.iterations = cv.iterations;
        rec.cv_scores = cv.scores.iter().map(|s| s.is_finite().then(|| s - ln_scale)).collect();
        if cv.best == usize::MAX {
            return Ok((rec, None));
        }
        let sigma = self.ratios[cv.best];
        let init = problem.initial(sigma, seed)?;
        let initial_ll = problem.mixture().eval(&init, sigma, None);
        let (mut c, mut ll, it) = problem.maximize(&cv.warm[cv.best], sigma, &self.config.optimizer);
        rec.iterations += it;
        if !(ll >= initial_ll) {
            // the fold warm start landed in a worse basin than the plain start
            let (c2, ll2, it2) = problem.maximize(&init, sigma, &self.config.optimizer);
            rec.iterations += it2;
            if !(ll >= ll2) {
                c = c2;
                ll = ll2;
            }
        }
        if !ll.is_finite() {
            return Ok((rec, None));
        }
        let ll = ll - n as f64 * ln_scale;
        rec.status = SpceCandidateStatus::Fitted;
        rec.sigma = Some(sigma * self.scale);
        rec.log_likelihood = Some(ll);
        rec.score = Some(match self.config.selection {
            Selection::Bic => 2.0 * ll - (basis.len() + 1) as f64 * (n as f64).ln(),
            Selection::CrossValidation { .. } => rec.cv_scores[cv.best].expect("best score is finite"),
        });
        let fitted = Fitted {
            basis,
            c,
            sigma,
            initial_ll: initial_ll - n as f64 * ln_scale,
        };
        Ok((rec, Some(fitted)))
    }
}

/// Maximum-likelihood fit on replication-free data.
///
/// For each candidate basis (degree, q) the coefficients are fitted at every
/// σ of the grid on k − 1 folds, warm-starting from the next smaller σ, and
/// scored on the held-out fold. The best σ is refitted on all data. The
/// basis is then chosen by BIC or by its cross-validation score.
pub fn fit(inputs: &RandomVector, data: &Dataset, config: &SpceConfig) -> Result<SpceModel> {
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
    let mut families = inputs.polynomial_families();
    families.push(config.latent.polynomial_family());
    let ratios = config.sigma_grid.ratios();
    let (_, ln_w) = latent_table(config.latent, config.quadrature_order, 1)?;
    let folds = fold_indices(n, config.folds, rng::derive_seed(config.seed, "spce-folds", 0));

    let ctx = FitContext {
        xs: &xs,
        y: &y,
        ln_w: &ln_w,
        folds: &folds,
        ratios: &ratios,
        config,
        scale,
    };
    let mut records: Vec<SpceCandidateRecord> = Vec::new();
    let mut fits: Vec<Option<Fitted>> = Vec::new();
    // distinct (p, q) often give the same index set; fit each set once
    let mut seen: std::collections::HashMap<Vec<MultiIndex>, usize> = Default::default();
    for &q in &config.q_grid {
        let mut best_score = f64::NEG_INFINITY;
        let mut worse = 0;
        for p in config.degrees.0..=config.degrees.1 {
            let basis = BasisSpec::new(families.clone(), p, q);
            let (rec, fitted) = if config.early_stop && worse >= 2 {
                (ctx.record(&basis, SpceCandidateStatus::NotReached), None)
            } else if n < 10 * basis.len() {
                (ctx.record(&basis, SpceCandidateStatus::Skipped), None)
            } else if let Some(&i) = seen.get(&basis.indices) {
                let mut rec = records[i].clone();
                rec.q_norm = q;
                (rec, None)
            } else {
                seen.insert(basis.indices.clone(), records.len());
                ctx.fit_candidate(basis)?
            };
            if let Some(score) = rec.score {
                if score > best_score {
                    best_score = score;
                    worse = 0;
                } else {
                    worse += 1;
                }
            }
            records.push(rec);
            fits.push(fitted);
        }
    }
    // first maximum, so duplicates resolve to the candidate that was fitted
    let mut selected = None;
    for (i, r) in records.iter().enumerate() {
        if let Some(s) = r.score {
            if selected.is_none_or(|(_, b)| s > b) {
                selected = Some((i, s));
            }
        }
    }
    let Some((selected, _)) = selected else {
        if records.iter().all(|r| r.status == SpceCandidateStatus::Skipped) {
            return Err(Error::Precondition(format!(
                "N = {n} is below 10 × the smallest candidate basis size"
            )));
        }
        let diag: Vec<String> = records
            .iter()
            .map(|r| format!("p={} q={}: {:?}", r.degree, r.q_norm, r.status))
            .collect();
        return Err(Error::FitFailed(format!(
            "every cross-validation score is -inf ({})",
            diag.join(", ")
        )));
    };
    let f = fits[selected].take().expect("selected candidate has a fit");
    let m = f.basis.dim() - 1;
    let mut c = f.c;
    c.iter_mut().for_each(|v| *v *= scale);
    let zero = f
        .basis
        .position(&MultiIndex::zero(m + 1))
        .expect("basis contains the constant");
    c[zero] += shift;
    let deterministic = f.basis.indices.iter().all(|a| a.0[m] == 0);
    let rec = &records[selected];
    Ok(SpceModel {
        kind: MODEL_KIND.into(),
        version: MODEL_VERSION,
        inputs: inputs.clone(),
        latent: config.latent,
        coefficients: c,
        sigma: f.sigma * scale,
        quadrature_order: config.quadrature_order,
        metadata: SpceMetadata {
            n_samples: n,
            log_likelihood: rec.log_likelihood.expect("fitted"),
            initial_log_likelihood: f.initial_ll,
            sigma_grid: ratios.iter().map(|r| r * scale).collect(),
            cv_scores: rec.cv_scores.clone(),
            selection: config.selection,
            selected,
            candidates: records,
            deterministic_in_latent: deterministic,
            input_bounds: input_bounds(&data.x),
            seed: config.seed,
        },
        basis: f.basis,
    })
}

/// Reusable evaluation buffers for a model.
pub struct Predictor<'m> {
    model: &'m SpceModel,
    univariate: Vec<Vec<f64>>,
    latent: Vec<usize>,
    std: Vec<f64>,
    psi: Vec<f64>,
    a: Vec<f64>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    table: Vec<f64>,
    k: usize,
    means: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'m> Predictor<'m> {
    /// Fails only if the model's quadrature order is unsupported.
    pub fn new(model: &'m SpceModel) -> Result<Self> {
        let m = model.dim();
        let latent: Vec<usize> = model.basis.indices.iter().map(|a| a.0[m] as usize).collect();
        let k = latent.iter().max().map_or(1, |d| d + 1);
        let rule = gauss_nodes(model.latent.polynomial_family(), model.quadrature_order)?;
        let (table, _) = latent_table(model.latent, model.quadrature_order, k)?;
        let psi = vec![0.0; model.basis.len()];
        let univariate = (0..m)
            .map(|i| vec![0.0; model.basis.indices.iter().map(|a| a.0[i] as usize).max().unwrap_or(0) + 1])
            .collect();
        Ok(Self {
            model,
            univariate,
            latent,
            std: vec![0.0; model.inputs.dim()],
            psi,
            a: vec![0.0; k],
            nodes: rule.nodes.clone(),
            weights: rule.weights,
            table,
            k,
            means: vec![0.0; model.quadrature_order],
            scratch: vec![0.0; k],
        })
    }

    fn latent_coefficients(&mut self, x: &[f64]) {
        self.model.inputs.to_standard(x, &mut self.std);
        for ((u, fam), &v) in self
            .univariate
            .iter_mut()
            .zip(&self.model.basis.families)
            .zip(&self.std)
        {
            fam.eval_all(v, u);
        }
        for (p, alpha) in self.psi.iter_mut().zip(&self.model.basis.indices) {
            *p = self
                .univariate
                .iter()
                .zip(&alpha.0)
                .map(|(u, &d)| u[d as usize])
                .product();
        }
        self.a.iter_mut().for_each(|v| *v = 0.0);
        for ((c, p), &l) in self.model.coefficients.iter().zip(&self.psi).zip(&self.latent) {
            self.a[l] += c * p;
        }
    }

    /// Means m_j(x) of the mixture components, one per quadrature node.
    pub fn component_means(&mut self, x: &[f64]) -> &[f64] {
        self.latent_coefficients(x);
        let k = self.k;
        for (j, m) in self.means.iter_mut().enumerate() {
            *m = self
                .a
                .iter()
                .zip(&self.table[j * k..(j + 1) * k])
                .map(|(a, l)| a * l)
                .sum();
        }
        &self.means
    }

    pub fn pdf(&mut self, x: &[f64], y: f64) -> f64 {
        let s = self.model.sigma;
        self.component_means(x);
        self.weights
            .iter()
            .zip(&self.means)
            .map(|(w, m)| w * normal::pdf((y - m) / s))
            .sum::<f64>()
            / s
    }

    pub fn cdf(&mut self, x: &[f64], y: f64) -> f64 {
        let s = self.model.sigma;
        self.component_means(x);
        let v: f64 = self
            .weights
            .iter()
            .zip(&self.means)
            .map(|(w, m)| w * normal::cdf((y - m) / s))
            .sum();
        v.clamp(0.0, 1.0)
    }

    /// s(x) = P(Y ≤ 0 | x).
    pub fn conditional_pf(&mut self, x: &[f64]) -> f64 {
        self.cdf(x, 0.0)
    }

    pub fn sample<R: rand::Rng + ?Sized>(&mut self, x: &[f64], n: usize, r: &mut R) -> Vec<f64> {
        self.latent_coefficients(x);
        let fam = self.model.latent.polynomial_family();
        (0..n)
            .map(|_| {
                let z = self.model.latent.sample(r);
                fam.eval_all(z, &mut self.scratch);
                let e: f64 = r.sample(StandardNormal);
                self.a.iter().zip(&self.scratch).map(|(a, l)| a * l).sum::<f64>() + self.model.sigma * e
            })
            .collect()
    }

    /// Conditional mean and variance: the mixture moments.
    pub fn mean_variance(&mut self, x: &[f64]) -> (f64, f64) {
        self.component_means(x);
        let mean: f64 = self.weights.iter().zip(&self.means).map(|(w, m)| w * m).sum();
        let spread: f64 = self
            .weights
            .iter()
            .zip(&self.means)
            .map(|(w, m)| w * (m - mean) * (m - mean))
            .sum();
        (mean, spread + self.model.sigma * self.model.sigma)
    }

    /// Quadrature nodes in z, for diagnostics.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
}

impl SpceModel {
    /// Model with only the constant term: Y(x) ~ N(c0, σ²) everywhere.
    pub fn constant(
        inputs: RandomVector,
        latent: LatentFamily,
        c0: f64,
        sigma: f64,
        quadrature_order: usize,
    ) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid("sigma", "must be positive and finite"));
        }
        if quadrature_order < 3 {
            return Err(invalid("quadrature_order", "must be at least 3"));
        }
        let mut families = inputs.polynomial_families();
        families.push(latent.polynomial_family());
        Ok(Self {
            kind: MODEL_KIND.into(),
            version: MODEL_VERSION,
            inputs,
            latent,
            basis: BasisSpec::new(families, 0, 1.0),
            coefficients: vec![c0],
            sigma,
            quadrature_order,
            metadata: SpceMetadata {
                n_samples: 0,
                log_likelihood: 0.0,
                initial_log_likelihood: 0.0,
                sigma_grid: vec![sigma],
                cv_scores: Vec::new(),
                selection: Selection::Bic,
                selected: 0,
                candidates: Vec::new(),
                deterministic_in_latent: true,
                input_bounds: Vec::new(),
                seed: 0,
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.inputs.dim()
    }

    pub fn predictor(&self) -> Result<Predictor<'_>> {
        Predictor::new(self)
    }

    pub fn pdf(&self, x: &[f64], y: f64) -> Result<f64> {
        self.inputs.check_dim(x)?;
        Ok(self.predictor()?.pdf(x, y))
    }

    pub fn cdf(&self, x: &[f64], y: f64) -> Result<f64> {
        self.inputs.check_dim(x)?;
        Ok(self.predictor()?.cdf(x, y))
    }

    pub fn conditional_pf(&self, x: &[f64]) -> Result<f64> {
        self.cdf(x, 0.0)
    }

    pub fn sample(&self, x: &[f64], n: usize, seed: u64) -> Result<Vec<f64>> {
        self.inputs.check_dim(x)?;
        if n == 0 {
            return Err(invalid("n", "must be at least 1"));
        }
        Ok(self.predictor()?.sample(x, n, &mut rng::rng(seed)))
    }

    pub fn mean_variance(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.inputs.check_dim(x)?;
        Ok(self.predictor()?.mean_variance(x))
    }

    /// Copy of the model evaluated with a different quadrature order.
    pub fn with_quadrature_order(&self, n_q: usize) -> Result<Self> {
        if n_q < 3 {
            return Err(invalid("quadrature_order", "must be at least 3"));
        }
        let mut m = self.clone();
        m.quadrature_order = n_q;
        Ok(m)
    }

    pub fn is_extrapolating(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.metadata.input_bounds)
            .any(|(v, (lo, hi))| v < lo || v > hi)
    }

    pub fn log_likelihood(&self, data: &Dataset) -> Result<f64> {
        if data.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: data.dim(),
            });
        }
        let mut pred = self.predictor()?;
        Ok(data.x.rows().zip(&data.y).map(|(x, &y)| pred.pdf(x, y).ln()).sum())
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
                "SPCE model version {} (supported: {MODEL_VERSION})",
                self.version
            )));
        }
        if self.basis.dim() != self.dim() + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.dim() + 1,
                got: self.basis.dim(),
            });
        }
        if self.coefficients.len() != self.basis.len() {
            return Err(Error::Precondition("coefficient count differs from basis size".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(invalid("sigma", "must be positive and finite"));
        }
        if self.quadrature_order < 3 {
            return Err(invalid("quadrature_order", "must be at least 3"));
        }
        Ok(())
    }
}
