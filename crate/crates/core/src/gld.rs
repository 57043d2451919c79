//! The FKML generalized lambda distribution (GLD).
//!
//! Defined through its quantile function
//!
//! ```text
//! Q(u) = λ1 + (1/λ2) · ((u^λ3 − 1)/λ3 − ((1−u)^λ4 − 1)/λ4),   u ∈ [0, 1]
//! ```
//!
//! with the logarithmic limit when λ3 or λ4 vanishes. The CDF has no closed
//! form and is obtained by numerically inverting Q; the density follows as
//! f(y) = λ2 / (u^(λ3−1) + (1−u)^(λ4−1)) at u = Q⁻¹(y).
//!
//! Levels are carried as (u, 1−u) pairs together with their logarithms so
//! that both tails keep relative precision far beyond 1e-16.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::quad::tanh_sinh_unit;
use crate::rng::{self, open01};

const SHAPE_EPS: f64 = 1e-12;
const MAIN_LO: f64 = 1e-15;
const LN_TINY: f64 = -745.0;

/// Search box for (λ3, λ4) in the method-of-moments fit.
pub const MOMENT_FIT_BOX: (f64, f64) = (-0.25, 1.5);

/// The four parameters of an FKML generalized lambda distribution.
///
/// Serialized as the 4-vector `[λ1, λ2, λ3, λ4]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct GldParams {
    /// λ1.
    pub location: f64,
    /// λ2 > 0.
    pub scale: f64,
    /// λ3, governs the lower tail.
    pub lower_shape: f64,
    /// λ4, governs the upper tail.
    pub upper_shape: f64,
}

impl From<[f64; 4]> for GldParams {
    fn from(v: [f64; 4]) -> Self {
        Self {
            location: v[0],
            scale: v[1],
            lower_shape: v[2],
            upper_shape: v[3],
        }
    }
}

impl From<GldParams> for [f64; 4] {
    fn from(p: GldParams) -> Self {
        p.to_array()
    }
}

/// A probability level u together with 1−u and both logarithms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Level {
    pub u: f64,
    pub v: f64,
    pub ln_u: f64,
    pub ln_v: f64,
}

impl Level {
    pub fn from_u(u: f64) -> Self {
        Self {
            u,
            v: 1.0 - u,
            ln_u: u.ln(),
            ln_v: (-u).ln_1p(),
        }
    }

    fn from_ln_u(t: f64) -> Self {
        let u = t.exp();
        Self {
            u,
            v: -t.exp_m1(),
            ln_u: t,
            ln_v: (-u).ln_1p(),
        }
    }

    fn from_ln_v(t: f64) -> Self {
        let v = t.exp();
        Self {
            u: -t.exp_m1(),
            v,
            ln_u: (-v).ln_1p(),
            ln_v: t,
        }
    }
}

/// Outcome of inverting the quantile function at some y.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Inversion {
    /// y at or below the lower end of the support (or of representable levels).
    Below,
    /// y at or above the upper end.
    Above,
    Inside(Level),
}

impl Inversion {
    pub fn cdf(&self) -> f64 {
        match self {
            Inversion::Below => 0.0,
            Inversion::Above => 1.0,
            Inversion::Inside(l) => l.u,
        }
    }
}

/// (v^λ − 1)/λ from ln v, with the limit ln v as λ → 0.
#[inline]
pub(crate) fn box_cox(ln_v: f64, lambda: f64) -> f64 {
    if lambda.abs() < SHAPE_EPS {
        ln_v
    } else if ln_v == f64::NEG_INFINITY {
        if lambda > 0.0 {
            -1.0 / lambda
        } else {
            f64::NEG_INFINITY
        }
    } else {
        (lambda * ln_v).exp_m1() / lambda
    }
}

/// ∂/∂λ of (v^λ − 1)/λ, with the limit (ln v)²/2 as λ → 0.
#[inline]
pub(crate) fn box_cox_dlambda(ln_v: f64, lambda: f64) -> f64 {
    if lambda.abs() < 1e-6 {
        // series: (ln v)²/2 + λ (ln v)³/6
        0.5 * ln_v * ln_v + lambda * ln_v.powi(3) / 6.0
    } else {
        let vl = (lambda * ln_v).exp();
        (lambda * vl * ln_v - (vl - 1.0)) / (lambda * lambda)
    }
}

impl GldParams {
    pub fn new(location: f64, scale: f64, lower_shape: f64, upper_shape: f64) -> Result<Self> {
        let p = Self {
            location,
            scale,
            lower_shape,
            upper_shape,
        };
        if p.is_valid() {
            Ok(p)
        } else {
            Err(Error::Domain(format!("invalid GLD parameters {:?}", p.to_array())))
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.location, self.scale, self.lower_shape, self.upper_shape]
    }

    /// Finite parameters with λ2 > 0. Under this condition the FKML quantile
    /// is strictly increasing for every (λ3, λ4).
    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite()) && self.scale > 0.0
    }

    /// Numerical monotonicity check of Q on an interior grid.
    pub fn is_monotone_on_grid(&self, points: usize) -> bool {
        let mut prev = f64::NEG_INFINITY;
        for i in 1..points {
            let q = self.quantile_at(Level::from_u(i as f64 / points as f64));
            if !(q > prev) {
                return false;
            }
            prev = q;
        }
        true
    }

    /// Q at a level.
    #[inline]
    pub fn quantile_at(&self, l: Level) -> f64 {
        self.location + (box_cox(l.ln_u, self.lower_shape) - box_cox(l.ln_v, self.upper_shape)) / self.scale
    }

    /// Q(u) for u ∈ [0, 1]; ±∞ at an endpoint whose tail is unbounded.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::Domain(format!("GLD quantile level must lie in [0,1], got {u}")));
        }
        let (lo, hi) = self.support();
        if u == 0.0 {
            return Ok(lo);
        }
        if u == 1.0 {
            return Ok(hi);
        }
        Ok(self.quantile_at(Level::from_u(u)))
    }

    /// Q′(u) = (u^(λ3−1) + (1−u)^(λ4−1)) / λ2.
    #[inline]
    pub fn quantile_derivative_at(&self, l: Level) -> f64 {
        (((self.lower_shape - 1.0) * l.ln_u).exp() + ((self.upper_shape - 1.0) * l.ln_v).exp()) / self.scale
    }

    /// Support endpoints; finite iff the corresponding shape is positive.
    pub fn support(&self) -> (f64, f64) {
        let lower = if self.lower_shape > SHAPE_EPS {
            self.location - 1.0 / (self.scale * self.lower_shape)
        } else {
            f64::NEG_INFINITY
        };
        let upper = if self.upper_shape > SHAPE_EPS {
            self.location + 1.0 / (self.scale * self.upper_shape)
        } else {
            f64::INFINITY
        };
        (lower, upper)
    }

    /// Inverts Q at `y`. Without a guess the main region is first bracketed
    /// by bisection down to width 1e-6, then refined with safeguarded Newton
    /// steps; with a guess Newton starts from it directly.
    pub fn invert(&self, y: f64, guess: Option<f64>) -> Inversion {
        let (lo, hi) = self.support();
        if y <= lo {
            return Inversion::Below;
        }
        if y >= hi {
            return Inversion::Above;
        }
        let tol = 1e-12 * y.abs().max(1.0);
        let main_lo = Level::from_u(MAIN_LO);
        let main_hi = Level::from_ln_v(MAIN_LO.ln());
        if y < self.quantile_at(main_lo) {
            // Lower tail, solved in t = ln u.
            if self.quantile_at(Level::from_ln_u(LN_TINY)) >= y {
                return Inversion::Below;
            }
            let t = solve_increasing(
                |t| {
                    let l = Level::from_ln_u(t);
                    (self.quantile_at(l) - y, self.quantile_derivative_at(l) * l.u)
                },
                LN_TINY,
                MAIN_LO.ln(),
                1e-6,
                None,
                tol,
            );
            return Inversion::Inside(Level::from_ln_u(t));
        }
        if y > self.quantile_at(main_hi) {
            // Upper tail, solved in s = −ln(1−u).
            if self.quantile_at(Level::from_ln_v(LN_TINY)) <= y {
                return Inversion::Above;
            }
            let s = solve_increasing(
                |s| {
                    let l = Level::from_ln_v(-s);
                    (self.quantile_at(l) - y, self.quantile_derivative_at(l) * l.v)
                },
                -MAIN_LO.ln(),
                -LN_TINY,
                1e-6,
                None,
                tol,
            );
            return Inversion::Inside(Level::from_ln_v(-s));
        }
        let start = guess.filter(|g| *g > MAIN_LO && *g < main_hi.u);
        let u = solve_increasing(
            |u| {
                let l = Level::from_u(u);
                (self.quantile_at(l) - y, self.quantile_derivative_at(l))
            },
            MAIN_LO,
            main_hi.u,
            1e-6,
            start,
            tol,
        );
        Inversion::Inside(Level::from_u(u))
    }

    /// Inversion starting with plain Newton steps from a nearby level
    /// (typically the solution for slightly different parameters). Falls
    /// back to [`GldParams::invert`] when Newton leaves the main region or
    /// stalls.
    pub fn invert_near(&self, y: f64, guess: f64) -> Inversion {
        if guess > MAIN_LO && guess < 1.0 - MAIN_LO {
            let tol = 1e-12 * y.abs().max(1.0);
            let mut u = guess;
            for _ in 0..12 {
                let l = Level::from_u(u);
                let r = self.quantile_at(l) - y;
                if r.abs() <= tol {
                    return Inversion::Inside(l);
                }
                let next = u - r / self.quantile_derivative_at(l);
                if !(next > MAIN_LO && next < 1.0 - MAIN_LO) {
                    break;
                }
                if (next - u).abs() <= 4.0 * f64::EPSILON * u.min(1.0 - u) {
                    return Inversion::Inside(Level::from_u(next));
                }
                u = next;
            }
        }
        self.invert(y, None)
    }

    /// F(y) = Q⁻¹(y); 0 below the support and 1 above it.
    pub fn cdf(&self, y: f64) -> f64 {
        if y.is_nan() {
            return f64::NAN;
        }
        self.invert(y, None).cdf()
    }

    /// Density at a level: λ2 / (u^(λ3−1) + (1−u)^(λ4−1)).
    pub fn pdf_at(&self, l: Level) -> f64 {
        self.ln_pdf_at(l).exp()
    }

    /// Log-density at a level, evaluated in log space to avoid overflow.
    pub fn ln_pdf_at(&self, l: Level) -> f64 {
        let a = (self.lower_shape - 1.0) * l.ln_u;
        let b = (self.upper_shape - 1.0) * l.ln_v;
        let m = a.max(b);
        self.scale.ln() - (m + ((a - m).exp() + (b - m).exp()).ln())
    }

    /// Density at `y`; exactly 0 outside the support.
    pub fn pdf(&self, y: f64) -> f64 {
        match self.invert(y, None) {
            Inversion::Inside(l) => self.pdf_at(l),
            _ => 0.0,
        }
    }

    /// Inverse-transform sample of size `n`.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::rng(seed);
        (0..n)
            .map(|_| self.quantile_at(Level::from_u(open01(&mut r))))
            .collect()
    }

    /// Mean and variance by quadrature over u. Infinite when a shape
    /// parameter is at or below −1/2.
    pub fn mean_variance(&self) -> (f64, f64) {
        let (m, c) = standardized_moments(self.lower_shape, self.upper_shape);
        (self.location + m / self.scale, c[0] / (self.scale * self.scale))
    }
}

/// Safeguarded Newton iteration for an increasing function on [a, b] whose
/// root is bracketed. `f` returns (value, derivative).
fn solve_increasing<F: Fn(f64) -> (f64, f64)>(
    f: F,
    mut a: f64,
    mut b: f64,
    bisect_width: f64,
    guess: Option<f64>,
    tol: f64,
) -> f64 {
    let mut x = match guess {
        Some(g) => g,
        None => {
            while b - a > bisect_width {
                let m = 0.5 * (a + b);
                if f(m).0 < 0.0 {
                    a = m;
                } else {
                    b = m;
                }
            }
            0.5 * (a + b)
        }
    };
    for _ in 0..200 {
        let (fx, dfx) = f(x);
        if fx.abs() <= tol {
            return x;
        }
        if fx < 0.0 {
            a = x;
        } else {
            b = x;
        }
        let newton = x - fx / dfx;
        let next = if dfx > 0.0 && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
        if (next - x).abs() <= 2.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE) || next == a || next == b {
            return next;
        }
        x = next;
    }
    x
}

/// Mean and central moments (μ2, μ3, μ4) of the bracket term
/// D(U) = (U^λ3 − 1)/λ3 − ((1−U)^λ4 − 1)/λ4 with U uniform.
fn standardized_moments(l3: f64, l4: f64) -> (f64, [f64; 3]) {
    let nodes = tanh_sinh_unit();
    let d = |n: &crate::quad::UnitNode| box_cox(n.u.ln(), l3) - box_cox(n.v.ln(), l4);
    let mean: f64 = nodes.iter().map(|n| n.w * d(n)).sum();
    let mut c = [0.0; 3];
    for n in nodes {
        let e = d(n) - mean;
        let e2 = e * e;
        c[0] += n.w * e2;
        c[1] += n.w * e2 * e;
        c[2] += n.w * e2 * e2;
    }
    (mean, c)
}

/// Skewness and kurtosis of the GLD shape (λ3, λ4).
pub fn shape_skew_kurtosis(l3: f64, l4: f64) -> (f64, f64) {
    let (_, c) = standardized_moments(l3, l4);
    (c[1] / c[0].powf(1.5), c[2] / (c[0] * c[0]))
}

/// Result of a method-of-moments fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentFit {
    pub params: GldParams,
    /// Squared skewness/kurtosis mismatch at the returned shape.
    pub residual: f64,
    /// False when no shape inside the search box matched the sample moments
    /// and the least-squares compromise was returned instead.
    pub exact: bool,
}

/// Method-of-moments fit: matches the first four sample moments.
///
/// The shape pair is searched in [`MOMENT_FIT_BOX`]² (coarse grid, then a
/// simplex refinement of the best cells); λ2 and λ1 then follow in closed
/// form from the sample variance and mean.
pub fn fit_moments(sample: &[f64]) -> Result<MomentFit> {
    if sample.len() < 8 {
        return Err(Error::Precondition(format!(
            "moment fit needs at least 8 values, got {}",
            sample.len()
        )));
    }
    if let Some(i) = sample.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: i,
            what: "sample value".into(),
        });
    }
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let mut m = [0.0; 3];
    for &x in sample {
        let e = x - mean;
        m[0] += e * e;
        m[1] += e * e * e;
        m[2] += e * e * e * e;
    }
    m.iter_mut().for_each(|v| *v /= n);
    if !(m[0] > 1e-300) || m[0] <= (1e-14 * mean.abs()).powi(2) {
        return Err(Error::Degenerate("sample has zero variance".into()));
    }
    let skew = m[1] / m[0].powf(1.5);
    let kurt = m[2] / (m[0] * m[0]);
    Ok(fit_shape_to_moments(mean, m[0], skew, kurt))
}

/// Fits a GLD with the given mean, variance, skewness and kurtosis.
pub fn fit_shape_to_moments(mean: f64, variance: f64, skew: f64, kurt: f64) -> MomentFit {
    let (lo, hi) = MOMENT_FIT_BOX;
    let objective = |l3: f64, l4: f64| -> f64 {
        let (s, k) = shape_skew_kurtosis(l3, l4);
        let r = (s - skew).powi(2) + (k - kurt).powi(2);
        if r.is_finite() {
            r
        } else {
            f64::MAX
        }
    };
    let grid = 24;
    let step = (hi - lo) / grid as f64;
    let mut cells = Vec::with_capacity((grid + 1) * (grid + 1));
    for i in 0..=grid {
        for j in 0..=grid {
            // nudge the lower edge off the divergent kurtosis boundary
            let l3 = (lo + i as f64 * step).max(lo + 1e-3);
            let l4 = (lo + j as f64 * step).max(lo + 1e-3);
            cells.push((objective(l3, l4), l3, l4));
        }
    }
    cells.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = (cells[0].0, cells[0].1, cells[0].2);
    let clamp = |v: f64| v.clamp(lo, hi);
    for &(_, l3, l4) in cells.iter().take(3) {
        let res = nelder_mead(
            |x: &[f64]| {
                let (a, b) = (x[0], x[1]);
                let out = (a - clamp(a)).powi(2) + (b - clamp(b)).powi(2);
                objective(clamp(a), clamp(b)) + 1e3 * out
            },
            &[l3, l4],
            &NelderMeadOptions {
                initial_step: 0.5 * step,
                max_iter: 400,
                f_tol: 1e-16,
                x_tol: 1e-10,
            },
        );
        if res.value < best.0 {
            best = (res.value, clamp(res.x[0]), clamp(res.x[1]));
        }
        if best.0 < 1e-12 {
            break;
        }
    }
    let (residual, l3, l4) = best;
    let (d_mean, c) = standardized_moments(l3, l4);
    let scale = (c[0] / variance).sqrt();
    let params = GldParams {
        location: mean - d_mean / scale,
        scale,
        lower_shape: l3,
        upper_shape: l4,
    };
    MomentFit {
        params,
        residual,
        exact: residual < 1e-8,
    }
}
