//! Prior → training → certificate, plus cached test statistics per grid cell.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, PriorConfig};
use super::HarnessError;
use crate::benchmarks::{
    dataset_cost, expected_cost_oracle, rollout, sample_dataset, BenchmarkSpec, EnvDistributionParams,
    EnvironmentDataset, OracleEstimate,
};
use crate::certificates::{build_certificate, Certificate, CertificateFile};
use crate::detectors::baseline::{self, BaselineCalibration, ScoreKind};
use crate::distributions::{renyi2_divergence, DiagonalGaussian, WeightSample};
use crate::seeds::{self, stream};
use crate::training::{finalize_policy, fit_nav_prior_mean, train, TrainTrace};

/// Output of one train-and-certify pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certified {
    pub prior: DiagonalGaussian,
    pub posterior: DiagonalGaussian,
    pub trace: TrainTrace,
    pub policy: WeightSample,
    /// Certificate at `δ_O`; its upper bound feeds OOD decisions.
    pub upper: Certificate,
    /// Certificate at `δ_W`; its lower bound feeds WD decisions.
    pub lower: Certificate,
}

impl Certified {
    pub fn certificate_file(&self) -> CertificateFile {
        CertificateFile::new(self.upper.clone(), self.prior.clone(), self.posterior.clone())
    }
}

/// Builds the data-independent prior. A regression prior is fitted on its
/// own stream, never on the training set.
pub fn build_prior(config: &ExperimentConfig) -> Result<DiagonalGaussian, HarnessError> {
    let d = config.benchmark.policy_dim();
    let prior = match &config.prior {
        PriorConfig::Isotropic { mean, variance } => {
            let mean = mean.clone().unwrap_or_else(|| vec![0.0; d]);
            DiagonalGaussian::isotropic(mean, *variance)?
        }
        PriorConfig::Explicit { distribution } => distribution.clone(),
        PriorConfig::Regression { samples, variance, fit } => {
            let BenchmarkSpec::PrimitiveNav(nav) = &config.benchmark else {
                return Err(HarnessError::Config("regression priors need the PrimitiveNav benchmark".into()));
            };
            let data = sample_dataset(
                &config.benchmark,
                &config.train_params,
                *samples,
                seeds::derive(config.seed, &[stream::PRIOR_DATA]),
            )?;
            DiagonalGaussian::isotropic(fit_nav_prior_mean(nav, &data, fit)?, *variance)?
        }
    };
    if prior.dim() != d {
        return Err(HarnessError::Config(format!("prior has dimension {}, policies have {d}", prior.dim())));
    }
    Ok(prior)
}

/// Trains on `dataset`, draws the policy and certifies it at `δ_O` and `δ_W`.
pub fn train_and_certify(
    config: &ExperimentConfig,
    prior: &DiagonalGaussian,
    dataset: &EnvironmentDataset,
    train_seed: u64,
    policy_seed: u64,
) -> Result<Certified, HarnessError> {
    let (posterior, trace) = train(prior, dataset, &config.benchmark, &config.train_config(train_seed))?;
    let policy = finalize_policy(&posterior, policy_seed);
    let cost = dataset_cost(&config.benchmark, dataset, &policy.weights)?;
    let d2 = renyi2_divergence(&posterior, prior)?;
    let m = dataset.len();
    let upper = build_certificate(cost, d2, m, config.detectors.delta_o, policy_seed)?;
    let lower = build_certificate(cost, d2, m, config.detectors.delta_w, policy_seed)?;
    Ok(Certified { prior: prior.clone(), posterior, trace, policy, upper, lower })
}

/// Mean cost and mean baseline scores of one test dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialStats {
    pub test_cost: f64,
    /// Mean MSP and MaxLogit scores, in [`ScoreKind::ALL`] order.
    pub baseline_scores: [f64; 2],
}

/// Draws a test dataset of size `n` and summarises the policy's behaviour.
pub fn test_statistics(
    spec: &BenchmarkSpec,
    params: &EnvDistributionParams,
    weights: &[f64],
    n: usize,
    seed: u64,
) -> TrialStats {
    let mut cost = 0.0;
    let mut scores = [0.0; 2];
    for i in 0..n as u64 {
        let env = spec.sample_environment(params, seeds::derive(seed, &[i]));
        let episode = rollout(spec, &env, weights);
        cost += episode.cost;
        for (acc, kind) in scores.iter_mut().zip(ScoreKind::ALL) {
            *acc += baseline::score(kind, &episode.score_vector);
        }
    }
    let nf = n as f64;
    TrialStats { test_cost: cost / nf, baseline_scores: scores.map(|s| s / nf) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedCell {
    pub label: String,
    pub params: EnvDistributionParams,
    pub oracle: OracleEstimate,
    /// Oracle `C_D' - C_D` and its standard error.
    pub gap: f64,
    pub gap_se: f64,
    pub trials: Vec<TrialStats>,
}

/// The shared state of a sweep: one certified policy, its oracle costs and
/// the test statistics for every (cell, trial).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prepared {
    pub certified: Certified,
    pub train_cost: OracleEstimate,
    pub calibrations: Vec<BaselineCalibration>,
    pub cells: Vec<PreparedCell>,
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared, HarnessError> {
    config.validate()?;
    let spec = &config.benchmark;
    let seed = config.seed;
    let prior = build_prior(config)?;
    let train_data = sample_dataset(spec, &config.train_params, config.m, seeds::derive(seed, &[stream::TRAIN_DATA]))?;
    let certified = train_and_certify(
        config,
        &prior,
        &train_data,
        seeds::derive(seed, &[stream::TRAINING]),
        seeds::derive(seed, &[stream::POLICY]),
    )?;
    let weights = &certified.policy.weights;
    // All oracles share one stream so that cells differing only in nuisance
    // dimensions are compared on identical layouts.
    let oracle_seed = seeds::derive(seed, &[stream::ORACLE]);
    let train_cost = expected_cost_oracle(spec, &config.train_params, weights, config.oracle_samples, oracle_seed)?;
    let calibrations = ScoreKind::ALL
        .iter()
        .enumerate()
        .map(|(i, &kind)| {
            baseline::calibrate(
                kind,
                spec,
                &config.train_params,
                weights,
                config.detectors.baseline_holdout,
                config.detectors.baseline_quantile,
                seeds::derive(seed, &[stream::BASELINE, i as u64]),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut cells = Vec::with_capacity(config.test_grid.len());
    for (c, cell) in config.test_grid.iter().enumerate() {
        let params = config.cell_params(cell)?;
        let oracle = expected_cost_oracle(spec, &params, weights, config.oracle_samples, oracle_seed)?;
        let trials = (0..config.trials_per_cell as u64)
            .into_par_iter()
            .map(|t| {
                let s = seeds::derive(seed, &[stream::TEST_DATA, c as u64, t]);
                test_statistics(spec, &params, weights, config.n, s)
            })
            .collect();
        cells.push(PreparedCell {
            label: cell.label.clone(),
            params,
            gap: oracle.estimate - train_cost.estimate,
            gap_se: (oracle.std_error.powi(2) + train_cost.std_error.powi(2)).sqrt(),
            oracle,
            trials,
        });
    }
    log::info!(
        "certified policy: C_S {:.4}, bounds [{:.4}, {:.4}], oracle C_D {:.4}",
        certified.upper.empirical_cost,
        certified.lower.lower_bound,
        certified.upper.upper_bound,
        train_cost.estimate
    );
    Ok(Prepared { certified, train_cost, calibrations, cells })
}
