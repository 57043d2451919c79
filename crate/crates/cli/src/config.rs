//! Run configuration file (TOML). Every table rejects unknown keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stochrel::glam::GlamConfig;
use stochrel::spce::SpceConfig;
use stochrel::RandomVector;

use crate::CliError;

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out_dir: Option<PathBuf>,
    /// Input distribution, one `[[inputs]]` table per variable.
    pub inputs: Option<RandomVector>,
    /// Take the input distribution of a named benchmark instead.
    pub inputs_from: Option<String>,
    pub data: Option<DataBlock>,
    pub model: Option<PathBuf>,
    pub emulator: Option<EmulatorBlock>,
    pub estimation: Option<EstimationBlock>,
    pub predict: Option<PredictBlock>,
    pub benchmark: Option<BenchmarkBlock>,
    pub study: Option<StudyBlock>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DataBlock {
    pub path: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EmulatorKind {
    Glam,
    Spce,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EmulatorBlock {
    pub kind: Option<EmulatorKind>,
    pub glam: Option<GlamConfig>,
    pub spce: Option<SpceConfig>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationBlock {
    pub n_mcs: Option<usize>,
    /// Number of (x, s(x)) rows to write alongside the estimate.
    pub s_sample: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PredictBlock {
    pub points: Option<PathBuf>,
    pub y: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Mcs,
    Analytic,
    Glam,
    Spce,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkBlock {
    pub name: Option<String>,
    pub ed_sizes: Option<Vec<usize>>,
    pub repetitions: Option<usize>,
    pub emulator: Option<MethodName>,
    pub n_mcs: Option<usize>,
    pub analytic_only: Option<bool>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StudyBlock {
    pub benchmark: Option<String>,
    pub methods: Option<Vec<MethodName>>,
    pub ed_sizes: Option<Vec<usize>>,
    pub repetitions: Option<usize>,
    pub n_mcs: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message())))
    }

    /// Input distribution from `inputs` or `inputs_from`.
    pub fn input_vector(&self) -> Result<Option<RandomVector>, CliError> {
        match (&self.inputs, &self.inputs_from) {
            (Some(_), Some(_)) => Err(CliError::config("set either `inputs` or `inputs_from`, not both")),
            (Some(rv), None) => Ok(Some(rv.clone())),
            (None, Some(name)) => Ok(Some(stochrel::benchmarks::by_name(name)?.inputs().clone())),
            (None, None) => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_named() {
        let err = toml::from_str::<RunConfig>("seed = 1\nsede = 2\n").unwrap_err();
        assert!(err.message().contains("sede"));
        let err = toml::from_str::<RunConfig>("[emulator.glam]\nq_grid = [1.0]\nbogus = 3\n").unwrap_err();
        assert!(err.message().contains("bogus"));
    }

    #[test]
    fn parses_inputs_and_emulator() {
        let cfg: RunConfig = toml::from_str(
            r#"
seed = 7
[[inputs]]
name = "R"
family = "lognormal"
params = { mean = 5.0, std = 0.8 }
[emulator]
kind = "spce"
[emulator.spce]
degrees = [0, 3]
"#,
        )
        .unwrap();
        assert_eq!(cfg.input_vector().unwrap().unwrap().dim(), 1);
        assert_eq!(cfg.emulator.unwrap().spce.unwrap().degrees, (0, 3));
    }
}
