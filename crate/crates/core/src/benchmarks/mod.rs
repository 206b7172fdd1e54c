//! Synthetic environment families with bounded costs.
//!
//! Two families are provided:
//!
//! * [`PrimitiveNav`](BenchmarkSpec::PrimitiveNav): a depth-sensing robot
//!   picks one of several motion primitives through an obstacle field
//!   ([`nav`]).
//! * [`SmoothQuadratic`](BenchmarkSpec::SmoothQuadratic): a clamped
//!   quadratic cost around a random target, differentiable almost
//!   everywhere ([`quadratic`]).
//!
//! Environments are plain values: sampling renders everything a rollout
//! needs, and a rollout is a pure function of (spec, environment, weights).
//! Environment `i` of a dataset with seed `s` is drawn from its own stream
//! `derive(s, [i])`, so datasets are reproducible regardless of how many
//! threads sample them.

pub mod nav;
pub mod quadratic;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeds;
pub use nav::{NavEnvironment, NavParams, NavSpec, Rect};
pub use quadratic::{QuadraticEnvironment, QuadraticParams, QuadraticSpec};

/// Exposure gain multiplier applied by [`nuisance_shift`] to navigation
/// environments.
pub const NUISANCE_GAIN_SCALE: f64 = 0.3;
/// Observation noise added by [`nuisance_shift`] to quadratic environments.
pub const NUISANCE_OBSERVATION_NOISE: f64 = 1.0;
/// Smallest sample count accepted by [`expected_cost_oracle`].
pub const MIN_ORACLE_SAMPLES: usize = 1000;

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("dataset size must be positive")]
    EmptyDataset,
    #[error("benchmark family {spec} does not match distribution family {params}")]
    FamilyMismatch { spec: &'static str, params: &'static str },
    #[error("invalid distribution parameters: {0}")]
    InvalidParams(String),
    #[error("oracle needs at least {MIN_ORACLE_SAMPLES} samples, got {0}")]
    TooFewOracleSamples(usize),
    #[error("policy has {got} weights but the benchmark expects {expected}")]
    PolicyDim { expected: usize, got: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Which environment family to run and its fixed geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum BenchmarkSpec {
    PrimitiveNav(NavSpec),
    SmoothQuadratic(QuadraticSpec),
}

/// A samplable distribution over environments of one family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum EnvDistributionParams {
    PrimitiveNav(NavParams),
    SmoothQuadratic(QuadraticParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum Environment {
    PrimitiveNav(NavEnvironment),
    SmoothQuadratic(QuadraticEnvironment),
}

/// `S` or `S'`: environments drawn i.i.d. from one distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentDataset {
    pub params: EnvDistributionParams,
    pub environments: Vec<Environment>,
    pub seed: u64,
}

impl EnvironmentDataset {
    pub fn len(&self) -> usize {
        self.environments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.environments.is_empty()
    }
}

/// Outcome of running a fixed policy in one environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub cost: f64,
    /// Clearance of the executed path (navigation only).
    pub min_distance: Option<f64>,
    pub chosen_primitive: Option<usize>,
    /// Logits fed to the softmax baselines.
    pub score_vector: Vec<f64>,
}

/// Monte-Carlo estimate of an expected cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl BenchmarkSpec {
    pub fn family(&self) -> &'static str {
        match self {
            BenchmarkSpec::PrimitiveNav(_) => "PrimitiveNav",
            BenchmarkSpec::SmoothQuadratic(_) => "SmoothQuadratic",
        }
    }

    /// Length of the policy weight vector.
    pub fn policy_dim(&self) -> usize {
        match self {
            BenchmarkSpec::PrimitiveNav(s) => s.policy_dim(),
            BenchmarkSpec::SmoothQuadratic(s) => s.dim,
        }
    }

    pub fn check_policy(&self, weights: &[f64]) -> Result<(), BenchmarkError> {
        if weights.len() != self.policy_dim() {
            return Err(BenchmarkError::PolicyDim { expected: self.policy_dim(), got: weights.len() });
        }
        Ok(())
    }

    /// Validates that `params` belongs to this family and is well formed.
    pub fn check_params(&self, params: &EnvDistributionParams) -> Result<(), BenchmarkError> {
        match (self, params) {
            (BenchmarkSpec::PrimitiveNav(_), EnvDistributionParams::PrimitiveNav(p)) => {
                let b = p.position_box;
                if !(b.x_min <= b.x_max && b.y_min <= b.y_max) {
                    return Err(BenchmarkError::InvalidParams("empty position box".into()));
                }
                if !(p.min_gap >= 0.0) {
                    return Err(BenchmarkError::InvalidParams("min_gap must be non-negative".into()));
                }
                let [lo, hi] = p.exposure_gain;
                if !(lo > 0.0 && lo <= hi) {
                    return Err(BenchmarkError::InvalidParams(
                        "exposure_gain must be a positive [min, max] range".into(),
                    ));
                }
                Ok(())
            }
            (BenchmarkSpec::SmoothQuadratic(s), EnvDistributionParams::SmoothQuadratic(p)) => {
                if p.center.len() != s.dim {
                    return Err(BenchmarkError::InvalidParams(format!(
                        "center has {} coordinates, benchmark dimension is {}",
                        p.center.len(),
                        s.dim
                    )));
                }
                if !(p.spread >= 0.0 && p.observation_noise >= 0.0) {
                    return Err(BenchmarkError::InvalidParams(
                        "spread and observation_noise must be non-negative".into(),
                    ));
                }
                Ok(())
            }
            _ => Err(BenchmarkError::FamilyMismatch { spec: self.family(), params: params.family() }),
        }
    }

    /// Draws one environment from the stream for `seed`.
    pub fn sample_environment(&self, params: &EnvDistributionParams, seed: u64) -> Environment {
        let mut rng = seeds::rng(seed);
        match (self, params) {
            (BenchmarkSpec::PrimitiveNav(s), EnvDistributionParams::PrimitiveNav(p)) => {
                Environment::PrimitiveNav(s.sample(p, &mut rng))
            }
            (BenchmarkSpec::SmoothQuadratic(s), EnvDistributionParams::SmoothQuadratic(p)) => {
                Environment::SmoothQuadratic(s.sample(p, &mut rng))
            }
            _ => panic!("benchmark family {} cannot sample {} parameters", self.family(), params.family()),
        }
    }

    /// Cost of a rollout without materialising the episode record.
    pub fn cost(&self, env: &Environment, weights: &[f64]) -> f64 {
        match (self, env) {
            (BenchmarkSpec::PrimitiveNav(s), Environment::PrimitiveNav(e)) => {
                let k = nav::argmax(&s.raw_scores(e, weights));
                s.cost_for_clearance(e.clearance[k])
            }
            (BenchmarkSpec::SmoothQuadratic(s), Environment::SmoothQuadratic(e)) => s.cost(e, weights),
            _ => panic!("benchmark family {} cannot run this environment", self.family()),
        }
    }
}

impl EnvDistributionParams {
    pub fn family(&self) -> &'static str {
        match self {
            EnvDistributionParams::PrimitiveNav(_) => "PrimitiveNav",
            EnvDistributionParams::SmoothQuadratic(_) => "SmoothQuadratic",
        }
    }
}

/// Samples `size` i.i.d. environments; deterministic in `seed`.
pub fn sample_dataset(
    spec: &BenchmarkSpec,
    params: &EnvDistributionParams,
    size: usize,
    seed: u64,
) -> Result<EnvironmentDataset, BenchmarkError> {
    if size == 0 {
        return Err(BenchmarkError::EmptyDataset);
    }
    spec.check_params(params)?;
    let environments = (0..size as u64)
        .into_par_iter()
        .map(|i| spec.sample_environment(params, seeds::derive(seed, &[i])))
        .collect();
    Ok(EnvironmentDataset { params: params.clone(), environments, seed })
}

/// Runs the policy `weights` in `env`.
///
/// Panics if the environment belongs to a different family than `spec`.
pub fn rollout(spec: &BenchmarkSpec, env: &Environment, weights: &[f64]) -> EpisodeResult {
    match (spec, env) {
        (BenchmarkSpec::PrimitiveNav(s), Environment::PrimitiveNav(e)) => {
            let raw = s.raw_scores(e, weights);
            let k = nav::argmax(&raw);
            let d_min = e.clearance[k];
            EpisodeResult {
                cost: s.cost_for_clearance(d_min),
                min_distance: Some(d_min),
                chosen_primitive: Some(k),
                score_vector: raw.iter().map(|r| e.exposure_gain * r).collect(),
            }
        }
        (BenchmarkSpec::SmoothQuadratic(s), Environment::SmoothQuadratic(e)) => EpisodeResult {
            cost: s.cost(e, weights),
            min_distance: None,
            chosen_primitive: None,
            score_vector: s.scores(e, weights),
        },
        _ => panic!("benchmark family {} cannot run this environment", spec.family()),
    }
}

/// Per-environment costs in dataset order.
pub fn episode_costs(spec: &BenchmarkSpec, dataset: &EnvironmentDataset, weights: &[f64]) -> Vec<f64> {
    dataset.environments.iter().map(|e| spec.cost(e, weights)).collect()
}

/// `C_S(π)`: the mean rollout cost over the dataset.
pub fn dataset_cost(
    spec: &BenchmarkSpec,
    dataset: &EnvironmentDataset,
    weights: &[f64],
) -> Result<f64, BenchmarkError> {
    if dataset.is_empty() {
        return Err(BenchmarkError::EmptyDataset);
    }
    spec.check_policy(weights)?;
    let total: f64 = episode_costs(spec, dataset, weights).iter().sum();
    Ok(total / dataset.len() as f64)
}

const ORACLE_CHUNK: u64 = 4096;

/// Monte-Carlo mean and standard error of the cost over `samples` fresh
/// environments from `params`.
pub fn expected_cost_oracle(
    spec: &BenchmarkSpec,
    params: &EnvDistributionParams,
    weights: &[f64],
    samples: usize,
    seed: u64,
) -> Result<OracleEstimate, BenchmarkError> {
    if samples < MIN_ORACLE_SAMPLES {
        return Err(BenchmarkError::TooFewOracleSamples(samples));
    }
    spec.check_params(params)?;
    spec.check_policy(weights)?;
    let n = samples as u64;
    let chunks: Vec<(f64, f64)> = (0..n.div_ceil(ORACLE_CHUNK))
        .into_par_iter()
        .map(|c| {
            let (mut s, mut s2) = (0.0, 0.0);
            for i in c * ORACLE_CHUNK..((c + 1) * ORACLE_CHUNK).min(n) {
                let env = spec.sample_environment(params, seeds::derive(seed, &[i]));
                let cost = spec.cost(&env, weights);
                s += cost;
                s2 += cost * cost;
            }
            (s, s2)
        })
        .collect();
    let (sum, sum_sq) = chunks.iter().fold((0.0, 0.0), |(a, b), (s, s2)| (a + s, b + s2));
    let nf = samples as f64;
    let mean = sum / nf;
    let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    Ok(OracleEstimate { estimate: mean, std_error: (var / nf).sqrt(), samples })
}

/// Alters only cost-irrelevant parameters: the sensor exposure for
/// navigation, the observation noise for the quadratic family.
pub fn nuisance_shift(params: &EnvDistributionParams) -> EnvDistributionParams {
    match params {
        EnvDistributionParams::PrimitiveNav(p) => EnvDistributionParams::PrimitiveNav(NavParams {
            exposure_gain: p.exposure_gain.map(|g| g * NUISANCE_GAIN_SCALE),
            ..p.clone()
        }),
        EnvDistributionParams::SmoothQuadratic(p) => {
            EnvDistributionParams::SmoothQuadratic(QuadraticParams {
                observation_noise: p.observation_noise + NUISANCE_OBSERVATION_NOISE,
                ..p.clone()
            })
        }
    }
}

fn describe(env: &Environment) -> String {
    let join = |v: &[f64]| v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(";");
    match env {
        Environment::PrimitiveNav(e) => {
            let obstacles: Vec<String> =
                e.obstacles.iter().map(|[x, y]| format!("{x:.6}:{y:.6}")).collect();
            format!("corridor={} gain={:.6} obstacles={}", e.corridor, e.exposure_gain, obstacles.join(";"))
        }
        Environment::SmoothQuadratic(e) => format!("target={}", join(&e.target)),
    }
}

/// Writes one CSV row per environment: id, environment seed, family,
/// parameters, policy name and cost.
pub fn write_dataset_csv<W: Write>(
    writer: W,
    spec: &BenchmarkSpec,
    dataset: &EnvironmentDataset,
    policy_name: &str,
    weights: &[f64],
) -> Result<(), BenchmarkError> {
    spec.check_policy(weights)?;
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["id", "seed", "family", "parameters", "policy", "cost"])?;
    for (i, env) in dataset.environments.iter().enumerate() {
        out.write_record([
            i.to_string(),
            seeds::derive(dataset.seed, &[i as u64]).to_string(),
            spec.family().to_string(),
            describe(env),
            policy_name.to_string(),
            format!("{}", spec.cost(env, weights)),
        ])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}
