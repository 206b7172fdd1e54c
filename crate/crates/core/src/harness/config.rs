//! Experiment configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::benchmarks::{nuisance_shift, BenchmarkSpec, EnvDistributionParams};
use crate::certificates::MIN_TRAINING_SIZE;
use crate::distributions::{DiagonalGaussian, DEFAULT_PROJECTION_MARGIN};
use crate::training::{GradientMethod, RegressionPrior, TrainConfig};

pub const CONFIG_VERSION: u32 = 1;

/// Everything needed to reproduce a run, as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub run_id: String,
    /// Master seed; every random stream of the run is derived from it.
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub benchmark: BenchmarkSpec,
    pub prior: PriorConfig,
    pub train_params: EnvDistributionParams,
    pub training: TrainingSettings,
    pub m: usize,
    pub n: usize,
    pub trials_per_cell: usize,
    pub oracle_samples: usize,
    pub detectors: DetectorSettings,
    #[serde(default)]
    pub test_grid: Vec<GridCell>,
    /// Pairs `(δ_O + δ'_O, δ_W + δ'_W)` for the rate study.
    #[serde(default)]
    pub rate_grid: Vec<[f64; 2]>,
    #[serde(default)]
    pub validation: Option<ValidationSettings>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorConfig {
    /// `N(mean, variance · I)`; the mean defaults to zero.
    Isotropic {
        #[serde(default)]
        mean: Option<Vec<f64>>,
        variance: f64,
    },
    Explicit {
        distribution: DiagonalGaussian,
    },
    /// Navigation only: mean fitted by regression on `samples` environments
    /// drawn from the training distribution on a stream disjoint from `S`.
    Regression {
        samples: usize,
        variance: f64,
        #[serde(default)]
        fit: RegressionPrior,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSettings {
    pub learning_rate: f64,
    pub es_samples: usize,
    pub iterations: usize,
    pub method: GradientMethod,
    #[serde(default = "default_margin")]
    pub projection_margin: f64,
}

fn default_margin() -> f64 {
    DEFAULT_PROJECTION_MARGIN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSettings {
    pub delta_o: f64,
    pub delta_w: f64,
    pub delta_o_prime: f64,
    pub delta_w_prime: f64,
    pub alpha_o: f64,
    pub alpha_w: f64,
    pub baseline_quantile: f64,
    pub baseline_holdout: usize,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        Self {
            delta_o: 0.01,
            delta_w: 0.01,
            delta_o_prime: 0.04,
            delta_w_prime: 0.04,
            alpha_o: 0.04,
            alpha_w: 0.04,
            baseline_quantile: 0.95,
            baseline_holdout: 1000,
        }
    }
}

/// One test distribution of a sweep. `nuisance: true` without `params`
/// means "the training distribution after [`nuisance_shift`]".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCell {
    pub label: String,
    #[serde(default)]
    pub params: Option<EnvDistributionParams>,
    #[serde(default)]
    pub nuisance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSettings {
    pub trials: usize,
    /// Confidence level `δ` of the certificates whose coverage is checked.
    pub coverage_delta: f64,
    /// Harder distribution used for false negatives and the lower-bound
    /// validity check; must have larger expected cost than training.
    pub ood_params: EnvDistributionParams,
    /// Test datasets of size `n` drawn per trial and per side.
    pub datasets_per_trial: usize,
    /// Confidence of the `C_D' - C_D` lower bound `ΔC_O`.
    #[serde(default = "default_gap_confidence")]
    pub gap_confidence: f64,
}

fn default_gap_confidence() -> f64 {
    0.9
}

/// Smallest trial count accepted by the validation protocol.
pub const MIN_VALIDATION_TRIALS: usize = 2000;

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let config = Self::from_json(&text).map_err(|e| HarnessError::json(path, e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {}, expected {CONFIG_VERSION}", self.version));
        }
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return bad(format!("run_id {:?} must be a non-empty plain name", self.run_id));
        }
        if self.m < MIN_TRAINING_SIZE {
            return bad(format!("m = {} is below {MIN_TRAINING_SIZE}", self.m));
        }
        if self.n == 0 || self.trials_per_cell == 0 {
            return bad("n and trials_per_cell must be positive".into());
        }
        self.benchmark.check_params(&self.train_params)?;
        for cell in &self.test_grid {
            self.cell_params(cell).and_then(|p| Ok(self.benchmark.check_params(&p)?))?;
        }
        self.train_config(0).validate()?;
        let d = &self.detectors;
        for (name, v) in [
            ("delta_o", d.delta_o),
            ("delta_w", d.delta_w),
            ("delta_o_prime", d.delta_o_prime),
            ("delta_w_prime", d.delta_w_prime),
            ("alpha_o", d.alpha_o),
            ("alpha_w", d.alpha_w),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("detectors.{name} = {v} must lie in (0, 1)"));
            }
        }
        if d.delta_o + d.delta_o_prime >= 1.0 || d.delta_w + d.delta_w_prime >= 1.0 {
            return bad("detector rate sums must stay below 1".into());
        }
        for rates in &self.rate_grid {
            self.rate_split(*rates)?;
        }
        if let Some(v) = &self.validation {
            if v.trials < MIN_VALIDATION_TRIALS {
                return bad(format!("validation.trials = {} is below {MIN_VALIDATION_TRIALS}", v.trials));
            }
            if !(v.coverage_delta > 0.0 && v.coverage_delta < 1.0) {
                return bad("validation.coverage_delta must lie in (0, 1)".into());
            }
            if !(v.gap_confidence > 0.0 && v.gap_confidence < 1.0 - d.delta_o) {
                return bad("validation.gap_confidence must lie in (0, 1 - delta_o)".into());
            }
            if v.datasets_per_trial == 0 {
                return bad("validation.datasets_per_trial must be positive".into());
            }
            self.benchmark.check_params(&v.ood_params)?;
        }
        Ok(())
    }

    /// Resolved distribution of a grid cell.
    pub fn cell_params(&self, cell: &GridCell) -> Result<EnvDistributionParams, HarnessError> {
        match (&cell.params, cell.nuisance) {
            (Some(p), false) => Ok(p.clone()),
            (None, true) => Ok(nuisance_shift(&self.train_params)),
            (Some(p), true) => Ok(nuisance_shift(p)),
            (None, false) => Err(HarnessError::Config(format!("grid cell {:?} has no params", cell.label))),
        }
    }

    /// Training settings with the seed for one training run and the
    /// confidence of the upper certificate.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.training.learning_rate,
            es_samples: self.training.es_samples,
            iterations: self.training.iterations,
            seed,
            delta: self.detectors.delta_o,
            projection_margin: self.training.projection_margin,
            method: self.training.method,
        }
    }

    /// Splits total rates into `(δ'_O, δ'_W)` with `δ_O`, `δ_W` held fixed.
    pub fn rate_split(&self, [ood, wd]: [f64; 2]) -> Result<[f64; 2], HarnessError> {
        let d = &self.detectors;
        for (name, total, base) in [("OOD", ood, d.delta_o), ("WD", wd, d.delta_w)] {
            if !(total > base && total < 1.0) {
                return Err(HarnessError::Config(format!(
                    "{name} rate {total} must lie in ({base}, 1)"
                )));
            }
        }
        Ok([ood - d.delta_o, wd - d.delta_w])
    }
}
