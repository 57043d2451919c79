//! Synthetic stand-in for a wind-turbine load dataset: a one-dimensional
//! heteroskedastic simulator with right-skewed noise.
//!
//! y(u, ω) = m(u) + d(u)·ξ(ω), where m is a logistic curve saturating at
//! `mean_max`, d is a constant floor plus a Gaussian bump (so the spread
//! peaks inside the speed range), and ξ is a standardized shifted
//! lognormal (zero mean, unit variance). The input u follows a truncated
//! Rayleigh distribution.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::StochasticSimulator;
use crate::dataset::Dataset;
use crate::error::Result;
use crate::inputs::{Marginal, RandomVector};
use crate::matrix::Matrix;
use crate::rng::{self, Rng};
use crate::{normal, quad};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindConfig {
    /// Untruncated Rayleigh mean of the wind speed.
    pub speed_mean: f64,
    pub cut_in: f64,
    pub cut_out: f64,
    pub mean_max: f64,
    pub mean_midpoint: f64,
    pub mean_width: f64,
    pub spread_floor: f64,
    pub spread_peak: f64,
    pub spread_peak_speed: f64,
    pub spread_width: f64,
    /// Log-scale σ of the lognormal behind ξ; larger is more skewed.
    pub skew: f64,
    /// Failure threshold τ: g = τ − y.
    pub threshold: f64,
}

impl Default for WindConfig {
    fn default() -> Self {
        Self {
            speed_mean: 10.0,
            cut_in: 3.0,
            cut_out: 25.0,
            mean_max: 9000.0,
            mean_midpoint: 9.0,
            mean_width: 1.8,
            spread_floor: 400.0,
            spread_peak: 1500.0,
            spread_peak_speed: 13.0,
            spread_width: 3.0,
            skew: 0.4,
            threshold: 15_000.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct WindSimulator {
    pub config: WindConfig,
    inputs: RandomVector,
}

impl WindSimulator {
    pub fn new(config: WindConfig) -> Result<Self> {
        let c = &config;
        let checks = [
            ("mean_width", c.mean_width),
            ("spread_width", c.spread_width),
            ("skew", c.skew),
            ("spread_floor", c.spread_floor),
        ];
        for (name, v) in checks {
            if !(v > 0.0) {
                return Err(crate::error::invalid(name_static(name), "must be positive"));
            }
        }
        let inputs = RandomVector::new(
            vec!["U".into()],
            vec![Marginal::truncated_rayleigh(c.speed_mean, c.cut_in, c.cut_out)?],
        )?;
        Ok(Self { config, inputs })
    }

    /// E[y | u].
    pub fn mean(&self, u: f64) -> f64 {
        let c = &self.config;
        c.mean_max / (1.0 + (-(u - c.mean_midpoint) / c.mean_width).exp())
    }

    /// Std[y | u].
    pub fn spread(&self, u: f64) -> f64 {
        let c = &self.config;
        c.spread_floor + c.spread_peak * (-0.5 * ((u - c.spread_peak_speed) / c.spread_width).powi(2)).exp()
    }

    fn xi_constants(&self) -> (f64, f64) {
        let s2 = self.config.skew * self.config.skew;
        let shift = (0.5 * s2).exp();
        let scale = (s2.exp_m1() * s2.exp()).sqrt();
        (shift, scale)
    }

    /// ξ from a standard normal draw.
    fn xi(&self, n: f64) -> f64 {
        let (shift, scale) = self.xi_constants();
        ((self.config.skew * n).exp() - shift) / scale
    }

    /// y at speed u for a given standard-normal latent draw.
    pub fn response_at_latent(&self, u: f64, z: f64) -> f64 {
        self.mean(u) + self.spread(u) * self.xi(z)
    }

    pub fn response(&self, u: f64, rng: &mut Rng) -> f64 {
        self.response_at_latent(u, rng.sample(StandardNormal))
    }

    /// P(y > τ | u) in closed form.
    pub fn exceedance(&self, u: f64) -> f64 {
        let (shift, scale) = self.xi_constants();
        let t = (self.config.threshold - self.mean(u)) / self.spread(u);
        let level = shift + scale * t;
        if level <= 0.0 {
            1.0
        } else {
            normal::sf(level.ln() / self.config.skew)
        }
    }

    /// Pf = ∫ P(y > τ | u) f_U(u) du by adaptive quadrature.
    pub fn reference_pf(&self) -> f64 {
        let m = &self.inputs.marginals()[0];
        let c = &self.config;
        quad::integrate_adaptive(|u| self.exceedance(u) * m.pdf(u), (c.cut_in, c.cut_out), 1e-12)
    }

    /// `n` responses y at Monte Carlo draws of u, as a one-input dataset.
    pub fn response_dataset(&self, n: usize, seed: u64) -> Result<Dataset> {
        let u = crate::inputs::mc_sample(&self.inputs, n, rng::derive_seed(seed, "wind-speed", 0));
        let blocks: Vec<usize> = (0..n.div_ceil(super::SIM_CHUNK)).collect();
        let parts = crate::par::map(&blocks, |&b| {
            let mut r = rng::rng(rng::derive_seed(seed, "wind-response", b as u64));
            let end = ((b + 1) * super::SIM_CHUNK).min(n);
            (b * super::SIM_CHUNK..end)
                .map(|i| self.response(u.get(i, 0), &mut r))
                .collect::<Vec<_>>()
        });
        let y: Vec<f64> = parts.into_iter().flatten().collect();
        Dataset::new(Matrix::from_vec(n, 1, u.as_slice().to_vec()), y)
    }
}

fn name_static(name: &str) -> &'static str {
    match name {
        "mean_width" => "mean_width",
        "spread_width" => "spread_width",
        "skew" => "skew",
        _ => "spread_floor",
    }
}

impl StochasticSimulator for WindSimulator {
    fn name(&self) -> &str {
        "synthetic-wind"
    }

    fn inputs(&self) -> &RandomVector {
        &self.inputs
    }

    fn evaluate(&self, x: &[f64], rng: &mut Rng) -> f64 {
        self.config.threshold - self.response(x[0], rng)
    }

    fn evaluate_at_latent(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        self.inputs.check_dim(x)?;
        if z.len() != 1 {
            return Err(crate::Error::DimensionMismatch {
                expected: 1,
                got: z.len(),
            });
        }
        Ok(self.config.threshold - self.response_at_latent(x[0], z[0]))
    }

    fn analytic_s(&self, x: &[f64]) -> Option<f64> {
        Some(self.exceedance(*x.first()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spread_peaks_inside_the_range() {
        let w = WindSimulator::new(WindConfig::default()).unwrap();
        let c = &w.config;
        assert!(w.spread(c.spread_peak_speed) > w.spread(c.cut_in));
        assert!(w.spread(c.spread_peak_speed) > w.spread(c.cut_out));
    }

    #[test]
    fn conditional_moments_match_closed_form() {
        let w = WindSimulator::new(WindConfig::default()).unwrap();
        let n = 100_000;
        let mut r = rng::rng(4);
        let ys: Vec<f64> = (0..n).map(|_| w.response(12.0, &mut r)).collect();
        let mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let d = w.spread(12.0);
        assert!((mean - w.mean(12.0)).abs() < 3.0 * d / (n as f64).sqrt());
        // variance of a sample variance needs the kurtosis; 5% is loose at n = 1e5
        assert!((var / (d * d) - 1.0).abs() < 0.05);
    }

    #[test]
    fn exceedance_matches_simulation() {
        let w = WindSimulator::new(WindConfig::default()).unwrap();
        let n = 200_000;
        let mut r = rng::rng(8);
        let hits = (0..n).filter(|_| w.response(14.0, &mut r) > w.config.threshold).count() as f64 / n as f64;
        let p = w.exceedance(14.0);
        assert!(
            (hits - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt() + 1e-6,
            "{hits} vs {p}"
        );
    }
}
