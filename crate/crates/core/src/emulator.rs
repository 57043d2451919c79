//! A fitted emulator of either kind, as stored in a model file.

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::glam::{self, GlamModel};
use crate::inputs::RandomVector;
use crate::spce::{self, SpceModel};

#[derive(Clone, Debug, PartialEq)]
pub enum Emulator {
    Glam(GlamModel),
    Spce(SpceModel),
}

#[derive(Deserialize)]
struct Header {
    kind: String,
}

impl Emulator {
    pub fn kind(&self) -> &'static str {
        match self {
            Emulator::Glam(_) => glam::MODEL_KIND,
            Emulator::Spce(_) => spce::MODEL_KIND,
        }
    }

    pub fn inputs(&self) -> &RandomVector {
        match self {
            Emulator::Glam(m) => &m.inputs,
            Emulator::Spce(m) => &m.inputs,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let h: Header = serde_json::from_str(s)?;
        match h.kind.as_str() {
            glam::MODEL_KIND => Ok(Emulator::Glam(GlamModel::from_json(s)?)),
            spce::MODEL_KIND => Ok(Emulator::Spce(SpceModel::from_json(s)?)),
            other => Err(Error::Unsupported(format!("unknown model kind `{other}`"))),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        match self {
            Emulator::Glam(m) => m.to_json(),
            Emulator::Spce(m) => m.to_json(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn conditional_pf(&self, x: &[f64]) -> Result<f64> {
        match self {
            Emulator::Glam(m) => m.conditional_pf(x),
            Emulator::Spce(m) => m.conditional_pf(x),
        }
    }

    /// Conditional CDF F(y | x).
    pub fn cdf(&self, x: &[f64], y: f64) -> Result<f64> {
        match self {
            Emulator::Glam(m) => Ok(m.lambda(x)?.cdf(y)),
            Emulator::Spce(m) => m.cdf(x, y),
        }
    }

    pub fn pdf(&self, x: &[f64], y: f64) -> Result<f64> {
        match self {
            Emulator::Glam(m) => Ok(m.lambda(x)?.pdf(y)),
            Emulator::Spce(m) => m.pdf(x, y),
        }
    }

    pub fn sample(&self, x: &[f64], n: usize, seed: u64) -> Result<Vec<f64>> {
        match self {
            Emulator::Glam(m) => m.sample(x, n, seed),
            Emulator::Spce(m) => m.sample(x, n, seed),
        }
    }

    /// Conditional mean and variance of Y at x.
    pub fn mean_variance(&self, x: &[f64]) -> Result<(f64, f64)> {
        match self {
            Emulator::Glam(m) => Ok(m.lambda(x)?.mean_variance()),
            Emulator::Spce(m) => m.mean_variance(x),
        }
    }

    pub fn is_extrapolating(&self, x: &[f64]) -> bool {
        match self {
            Emulator::Glam(m) => m.is_extrapolating(x),
            Emulator::Spce(m) => m.is_extrapolating(x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inputs::Marginal;
    use crate::spce::LatentFamily;

    #[test]
    fn dispatches_on_kind() {
        let rv = RandomVector::unnamed(vec![Marginal::uniform(0.0, 1.0).unwrap()]).unwrap();
        let g = Emulator::Glam(GlamModel::constant(rv.clone(), [0.0, 0.0, 0.2, 0.2]));
        let s = Emulator::Spce(SpceModel::constant(rv, LatentFamily::Gaussian, 1.0, 0.5, 10).unwrap());
        for e in [g, s] {
            let back = Emulator::from_json(&e.to_json().unwrap()).unwrap();
            assert_eq!(back, e);
        }
        assert!(matches!(
            Emulator::from_json(r#"{"kind": "kriging"}"#),
            Err(Error::Unsupported(_))
        ));
    }
}
