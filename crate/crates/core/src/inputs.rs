//! Marginal distributions, independent random vectors and their sampling.
//!
//! Four families cover the benchmark problems: lognormal, Gaussian, uniform
//! and a Rayleigh distribution truncated to an interval (wind speeds between
//! cut-in and cut-off). A zero scale parameter on the lognormal or Gaussian
//! family denotes a point mass, which keeps degenerate designs expressible.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;
use crate::normal;
use crate::pce::PolyFamily;
use crate::rng::{self, open01};

/// Converts a lognormal mean and standard deviation to the parameters
/// (λ, ζ) of the underlying Gaussian.
pub fn lognormal_from_moments(mean: f64, std: f64) -> Result<(f64, f64)> {
    if !(mean > 0.0) || !mean.is_finite() {
        return Err(Error::Domain(format!("lognormal mean must be > 0, got {mean}")));
    }
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::Domain(format!("lognormal std must be >= 0, got {std}")));
    }
    let cv = std / mean;
    let zeta2 = (cv * cv).ln_1p();
    Ok((mean.ln() - 0.5 * zeta2, zeta2.sqrt()))
}

/// Mean and standard deviation of a lognormal with parameters (λ, ζ).
pub fn lognormal_moments(lambda: f64, zeta: f64) -> (f64, f64) {
    let z2 = zeta * zeta;
    let mean = (lambda + 0.5 * z2).exp();
    (mean, mean * z2.exp_m1().sqrt())
}

/// One-dimensional marginal distribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Marginal {
    /// ln X ~ N(lambda, zeta²).
    Lognormal {
        lambda: f64,
        zeta: f64,
    },
    Gaussian {
        mean: f64,
        std: f64,
    },
    Uniform {
        lower: f64,
        upper: f64,
    },
    /// Rayleigh with the given untruncated mean, restricted to [lower, upper].
    TruncatedRayleigh {
        mean: f64,
        lower: f64,
        upper: f64,
    },
}

impl Marginal {
    pub fn lognormal(lambda: f64, zeta: f64) -> Result<Self> {
        Self::Lognormal { lambda, zeta }.validated()
    }

    pub fn lognormal_from_moments(mean: f64, std: f64) -> Result<Self> {
        let (lambda, zeta) = lognormal_from_moments(mean, std)?;
        Self::lognormal(lambda, zeta)
    }

    pub fn gaussian(mean: f64, std: f64) -> Result<Self> {
        Self::Gaussian { mean, std }.validated()
    }

    pub fn uniform(lower: f64, upper: f64) -> Result<Self> {
        Self::Uniform { lower, upper }.validated()
    }

    pub fn truncated_rayleigh(mean: f64, lower: f64, upper: f64) -> Result<Self> {
        Self::TruncatedRayleigh { mean, lower, upper }.validated()
    }

    fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |name, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, format!("must be finite, got {v}")))
            }
        };
        match *self {
            Marginal::Lognormal { lambda, zeta } => {
                finite("lambda", lambda)?;
                finite("zeta", zeta)?;
                if zeta < 0.0 {
                    return Err(invalid("zeta", "must be >= 0"));
                }
            }
            Marginal::Gaussian { mean, std } => {
                finite("mean", mean)?;
                finite("std", std)?;
                if std < 0.0 {
                    return Err(invalid("std", "must be >= 0"));
                }
            }
            Marginal::Uniform { lower, upper } => {
                finite("lower", lower)?;
                finite("upper", upper)?;
                if !(lower < upper) {
                    return Err(invalid("upper", "uniform requires lower < upper"));
                }
            }
            Marginal::TruncatedRayleigh { mean, lower, upper } => {
                finite("mean", mean)?;
                finite("lower", lower)?;
                finite("upper", upper)?;
                if !(mean > 0.0) {
                    return Err(invalid("mean", "Rayleigh mean must be > 0"));
                }
                if !(lower >= 0.0 && lower < upper) {
                    return Err(invalid("upper", "truncation requires 0 <= lower < upper"));
                }
            }
        }
        Ok(())
    }

    /// True for a zero-scale (point mass) lognormal or Gaussian.
    pub fn is_degenerate(&self) -> bool {
        matches!(
            *self,
            Marginal::Lognormal { zeta: 0.0, .. } | Marginal::Gaussian { std: 0.0, .. }
        )
    }

    fn rayleigh_sigma(mean: f64) -> f64 {
        mean / (PI / 2.0).sqrt()
    }

    // Untruncated Rayleigh CDF, computed as -expm1 for small arguments.
    fn rayleigh_cdf(x: f64, sigma: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            -(-0.5 * (x / sigma).powi(2)).exp_m1()
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Marginal::Lognormal { lambda, zeta } => {
                if x <= 0.0 {
                    0.0
                } else if zeta == 0.0 {
                    f64::from(u8::from(x.ln() >= lambda))
                } else {
                    normal::cdf((x.ln() - lambda) / zeta)
                }
            }
            Marginal::Gaussian { mean, std } => {
                if std == 0.0 {
                    f64::from(u8::from(x >= mean))
                } else {
                    normal::cdf((x - mean) / std)
                }
            }
            Marginal::Uniform { lower, upper } => ((x - lower) / (upper - lower)).clamp(0.0, 1.0),
            Marginal::TruncatedRayleigh { mean, lower, upper } => {
                let s = Self::rayleigh_sigma(mean);
                if x <= lower {
                    return 0.0;
                }
                if x >= upper {
                    return 1.0;
                }
                let fa = Self::rayleigh_cdf(lower, s);
                let fb = Self::rayleigh_cdf(upper, s);
                ((Self::rayleigh_cdf(x, s) - fa) / (fb - fa)).clamp(0.0, 1.0)
            }
        }
    }

    /// Quantile for `u` in the open interval (0, 1).
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Domain(format!("quantile level must lie in (0,1), got {u}")));
        }
        Ok(self.quantile_unchecked(u))
    }

    pub(crate) fn quantile_unchecked(&self, u: f64) -> f64 {
        match *self {
            Marginal::Lognormal { lambda, zeta } => (lambda + zeta * normal::quantile(u)).exp(),
            Marginal::Gaussian { mean, std } => mean + std * normal::quantile(u),
            Marginal::Uniform { lower, upper } => lower + u * (upper - lower),
            Marginal::TruncatedRayleigh { mean, lower, upper } => {
                let s = Self::rayleigh_sigma(mean);
                let fa = Self::rayleigh_cdf(lower, s);
                let fb = Self::rayleigh_cdf(upper, s);
                let f = fa + u * (fb - fa);
                (s * (-2.0 * (-f).ln_1p()).sqrt()).clamp(lower, upper)
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Marginal::Lognormal { lambda, zeta } => {
                if x <= 0.0 || zeta == 0.0 {
                    0.0
                } else {
                    normal::pdf((x.ln() - lambda) / zeta) / (x * zeta)
                }
            }
            Marginal::Gaussian { mean, std } => {
                if std == 0.0 {
                    0.0
                } else {
                    normal::pdf((x - mean) / std) / std
                }
            }
            Marginal::Uniform { lower, upper } => {
                if x < lower || x > upper {
                    0.0
                } else {
                    1.0 / (upper - lower)
                }
            }
            Marginal::TruncatedRayleigh { mean, lower, upper } => {
                if x < lower || x > upper {
                    return 0.0;
                }
                let s = Self::rayleigh_sigma(mean);
                let mass = Self::rayleigh_cdf(upper, s) - Self::rayleigh_cdf(lower, s);
                x / (s * s) * (-0.5 * (x / s).powi(2)).exp() / mass
            }
        }
    }

    /// Support of the distribution (point masses return a zero-width interval).
    pub fn support(&self) -> (f64, f64) {
        match *self {
            Marginal::Lognormal { lambda, zeta: 0.0 } => (lambda.exp(), lambda.exp()),
            Marginal::Lognormal { .. } => (0.0, f64::INFINITY),
            Marginal::Gaussian { mean, std: 0.0 } => (mean, mean),
            Marginal::Gaussian { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            Marginal::Uniform { lower, upper } => (lower, upper),
            Marginal::TruncatedRayleigh { lower, upper, .. } => (lower, upper),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Marginal::Lognormal { lambda, zeta } => lognormal_moments(lambda, zeta).0,
            Marginal::Gaussian { mean, .. } => mean,
            Marginal::Uniform { lower, upper } => 0.5 * (lower + upper),
            Marginal::TruncatedRayleigh { .. } => {
                crate::quad::integrate_adaptive(|x| x * self.pdf(x), self.support(), 1e-12)
            }
        }
    }

    /// Draws one variate by inverse transform.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile_unchecked(open01(rng))
    }

    /// Orthonormal polynomial family used after the isoprobabilistic transform.
    pub fn polynomial_family(&self) -> PolyFamily {
        match self {
            Marginal::Lognormal { .. } | Marginal::Gaussian { .. } => PolyFamily::Hermite,
            Marginal::Uniform { .. } | Marginal::TruncatedRayleigh { .. } => PolyFamily::Legendre,
        }
    }

    /// Maps `x` to the standard space of [`Self::polynomial_family`]:
    /// N(0, 1) for Hermite, Uniform(-1, 1) for Legendre.
    pub fn to_standard(&self, x: f64) -> f64 {
        match *self {
            Marginal::Lognormal { lambda, zeta } => {
                if zeta == 0.0 {
                    0.0
                } else {
                    (x.max(f64::MIN_POSITIVE).ln() - lambda) / zeta
                }
            }
            Marginal::Gaussian { mean, std } => {
                if std == 0.0 {
                    0.0
                } else {
                    (x - mean) / std
                }
            }
            Marginal::Uniform { lower, upper } => 2.0 * (x - lower) / (upper - lower) - 1.0,
            Marginal::TruncatedRayleigh { .. } => 2.0 * self.cdf(x) - 1.0,
        }
    }

    /// Inverse of [`Self::to_standard`].
    pub fn from_standard(&self, xi: f64) -> f64 {
        match *self {
            Marginal::Lognormal { lambda, zeta } => (lambda + zeta * xi).exp(),
            Marginal::Gaussian { mean, std } => mean + std * xi,
            Marginal::Uniform { lower, upper } => lower + 0.5 * (xi + 1.0) * (upper - lower),
            Marginal::TruncatedRayleigh { .. } => {
                self.quantile_unchecked((0.5 * (xi + 1.0)).clamp(1e-300, 1.0 - 1e-16))
            }
        }
    }
}

/// Distribution family names used in configuration files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Lognormal,
    Gaussian,
    Uniform,
    TruncatedRayleigh,
}

/// Serialized form of one named input variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableSpec {
    pub name: String,
    pub family: Family,
    pub params: BTreeMap<String, f64>,
}

impl VariableSpec {
    fn from_marginal(name: &str, m: &Marginal) -> Self {
        let (family, params): (Family, &[(&str, f64)]) = match *m {
            Marginal::Lognormal { lambda, zeta } => (Family::Lognormal, &[("lambda", lambda), ("zeta", zeta)]),
            Marginal::Gaussian { mean, std } => (Family::Gaussian, &[("mean", mean), ("std", std)]),
            Marginal::Uniform { lower, upper } => (Family::Uniform, &[("lower", lower), ("upper", upper)]),
            Marginal::TruncatedRayleigh { mean, lower, upper } => (
                Family::TruncatedRayleigh,
                &[("mean", mean), ("lower", lower), ("upper", upper)],
            ),
        };
        Self {
            name: name.to_owned(),
            family,
            params: params.iter().map(|&(k, v)| (k.to_owned(), v)).collect(),
        }
    }

    /// Resolves the parameters. Lognormals accept either `lambda`/`zeta` or
    /// `mean`/`std`.
    pub fn to_marginal(&self) -> Result<Marginal> {
        let p = &self.params;
        let take = |keys: &[&str]| -> Option<Vec<f64>> {
            if p.len() == keys.len() && keys.iter().all(|k| p.contains_key(*k)) {
                Some(keys.iter().map(|k| p[*k]).collect())
            } else {
                None
            }
        };
        let bad = |expected: &str| {
            Error::Domain(format!(
                "variable `{}`: parameters {:?} do not match {:?} (expected {expected})",
                self.name,
                p.keys().collect::<Vec<_>>(),
                self.family
            ))
        };
        match self.family {
            Family::Lognormal => {
                if let Some(v) = take(&["lambda", "zeta"]) {
                    Marginal::lognormal(v[0], v[1])
                } else if let Some(v) = take(&["mean", "std"]) {
                    Marginal::lognormal_from_moments(v[0], v[1])
                } else {
                    Err(bad("lambda+zeta or mean+std"))
                }
            }
            Family::Gaussian => {
                let v = take(&["mean", "std"]).ok_or_else(|| bad("mean+std"))?;
                Marginal::gaussian(v[0], v[1])
            }
            Family::Uniform => {
                let v = take(&["lower", "upper"]).ok_or_else(|| bad("lower+upper"))?;
                Marginal::uniform(v[0], v[1])
            }
            Family::TruncatedRayleigh => {
                let v = take(&["mean", "lower", "upper"]).ok_or_else(|| bad("mean+lower+upper"))?;
                Marginal::truncated_rayleigh(v[0], v[1], v[2])
            }
        }
    }
}

/// Vector of mutually independent named marginals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<VariableSpec>", into = "Vec<VariableSpec>")]
pub struct RandomVector {
    names: Vec<String>,
    marginals: Vec<Marginal>,
}

impl TryFrom<Vec<VariableSpec>> for RandomVector {
    type Error = Error;

    fn try_from(specs: Vec<VariableSpec>) -> Result<Self> {
        let marginals = specs
            .iter()
            .map(VariableSpec::to_marginal)
            .collect::<Result<Vec<_>>>()?;
        RandomVector::new(specs.into_iter().map(|s| s.name).collect(), marginals)
    }
}

impl From<RandomVector> for Vec<VariableSpec> {
    fn from(rv: RandomVector) -> Self {
        rv.names
            .iter()
            .zip(&rv.marginals)
            .map(|(n, m)| VariableSpec::from_marginal(n, m))
            .collect()
    }
}

impl RandomVector {
    pub fn new(names: Vec<String>, marginals: Vec<Marginal>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(invalid("marginals", "a random vector needs at least one component"));
        }
        if names.len() != marginals.len() {
            return Err(Error::DimensionMismatch {
                expected: marginals.len(),
                got: names.len(),
            });
        }
        for m in &marginals {
            m.validate()?;
        }
        Ok(Self { names, marginals })
    }

    /// Builds a vector with generated names `x1..xM`.
    pub fn unnamed(marginals: Vec<Marginal>) -> Result<Self> {
        let names = (1..=marginals.len()).map(|i| format!("x{i}")).collect();
        Self::new(names, marginals)
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[Marginal] {
        &self.marginals
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            })
        }
    }

    /// Joint density (product of marginals).
    pub fn pdf(&self, x: &[f64]) -> f64 {
        self.marginals.iter().zip(x).map(|(m, &v)| m.pdf(v)).product()
    }

    pub fn to_standard(&self, x: &[f64], out: &mut [f64]) {
        for ((o, m), &v) in out.iter_mut().zip(&self.marginals).zip(x) {
            *o = m.to_standard(v);
        }
    }

    /// Maps every row of `x` to the standard space of the polynomial basis.
    /// Fails on dimension mismatch or when a value maps to a non-finite point
    /// (outside the support, or a degenerate marginal).
    pub fn standardize(&self, x: &Matrix) -> Result<Matrix> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.ncols(),
            });
        }
        let mut out = Matrix::zeros(x.nrows(), self.dim());
        for i in 0..x.nrows() {
            self.to_standard(x.row(i), out.row_mut(i));
            if let Some(j) = out.row(i).iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    row: i,
                    what: format!("input `{}` has no finite standardized value", self.names[j]),
                });
            }
        }
        Ok(out)
    }

    pub fn polynomial_families(&self) -> Vec<PolyFamily> {
        self.marginals.iter().map(Marginal::polynomial_family).collect()
    }

    /// Fills `out` with one joint draw.
    pub fn sample_into<R: rand::Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for (o, m) in out.iter_mut().zip(&self.marginals) {
            *o = m.sample(rng);
        }
    }
}

/// Plain Monte Carlo sample: `n` i.i.d. rows drawn from `rv`.
pub fn mc_sample(rv: &RandomVector, n: usize, seed: u64) -> Matrix {
    let mut r = rng::rng(seed);
    let mut out = Matrix::zeros(n, rv.dim());
    for i in 0..n {
        rv.sample_into(&mut r, out.row_mut(i));
    }
    out
}

/// Latin hypercube sample: in every column, exactly one point falls in each
/// probability stratum ((k-1)/n, k/n), with strata permuted independently
/// per column.
pub fn lhs_sample(rv: &RandomVector, n: usize, seed: u64) -> Matrix {
    use rand::seq::SliceRandom;
    let mut r = rng::rng(seed);
    let mut out = Matrix::zeros(n, rv.dim());
    let mut perm: Vec<usize> = (0..n).collect();
    for (j, m) in rv.marginals().iter().enumerate() {
        perm.shuffle(&mut r);
        for (i, &k) in perm.iter().enumerate() {
            let u = (k as f64 + open01(&mut r)) / n as f64;
            out.row_mut(i)[j] = m.quantile_unchecked(u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0));
        }
    }
    out
}
