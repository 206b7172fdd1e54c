//! Posterior optimisation: gradient descent on the PAC-Bayes upper bound
//!
//! ```text
//! B(ψ) = C_S(N_ψ) + sqrt(R(ψ)),   R(ψ) = (D2(N_ψ || N_ψ0) + ln(2 sqrt(m) / (δ/2)^3)) / (2m)
//! ```
//!
//! Two estimators of `∇_ψ B` are provided. [`es_gradient`] is a black-box
//! score-function estimator that works for any benchmark; it folds the
//! regularizer gradient into the same samples through the likelihood ratio
//! against the prior. [`reparam_gradient`] differentiates through
//! `w = μ + exp(½ log s) ⊙ z` and is restricted to the smooth quadratic
//! benchmark.
//!
//! Every iteration draws its randomness from `derive(seed, [iteration])`
//! and reductions run in index order, so [`train`] is a pure function of its
//! inputs regardless of the rayon pool size.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchmarks::{BenchmarkSpec, EnvDistributionParams, Environment, EnvironmentDataset, NavSpec};
use crate::certificates::{regularizer, CertificateError, MIN_TRAINING_SIZE};
use crate::distributions::{
    project_variances, renyi2_divergence, renyi2_gradient, DiagonalGaussian, DistributionError,
    GaussianGradient, WeightSample, DEFAULT_PROJECTION_MARGIN,
};
use crate::seeds;

/// Floor applied to `R` wherever `sqrt(R)` is a denominator.
pub const MIN_REGULARIZER: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training needs at least {MIN_TRAINING_SIZE} environments, got {0}")]
    TooFewEnvironments(usize),
    #[error("the posterior has infinite divergence from the prior; project its variances first")]
    InfiniteDivergence,
    #[error("gradient estimation needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("the reparameterised gradient needs a smooth benchmark, got {0}")]
    NonSmoothBenchmark(&'static str),
    #[error("regularizer must be positive, got {0}")]
    NonPositiveRegularizer(f64),
    #[error("parameters became non-finite at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("posterior has dimension {got}, benchmark policies have {expected}")]
    PolicyDim { expected: usize, got: usize },
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    Certificate(#[from] CertificateError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GradientMethod {
    #[serde(rename = "ES")]
    Es,
    Reparam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub es_samples: usize,
    pub iterations: usize,
    pub seed: u64,
    pub delta: f64,
    #[serde(default = "default_margin")]
    pub projection_margin: f64,
    pub method: GradientMethod,
}

fn default_margin() -> f64 {
    DEFAULT_PROJECTION_MARGIN
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            es_samples: 64,
            iterations: 100,
            seed: 0,
            delta: 0.01,
            projection_margin: DEFAULT_PROJECTION_MARGIN,
            method: GradientMethod::Es,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::InvalidConfig(msg.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.es_samples < 2 {
            return bad("es_samples must be at least 2");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must lie in (0, 1)");
        }
        if !(self.projection_margin > 0.0 && self.projection_margin < 1.0) {
            return bad("projection_margin must lie in (0, 1)");
        }
        Ok(())
    }
}

/// One row of the training trace, evaluated before the step is applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub bound: f64,
    pub cost: f64,
    pub d2: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
    pub warnings: Vec<String>,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["iteration", "bound", "cost", "d2", "grad_norm"])?;
        for r in &self.records {
            out.write_record([
                r.iteration.to_string(),
                r.bound.to_string(),
                r.cost.to_string(),
                r.d2.to_string(),
                r.grad_norm.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// A gradient together with the quantities it was evaluated at.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub gradient: GaussianGradient,
    /// Mean training cost over the sampled policies.
    pub cost: f64,
    pub d2: f64,
    pub regularizer: f64,
    /// Set when `R` had to be floored at [`MIN_REGULARIZER`].
    pub clamped: bool,
}

impl GradientEstimate {
    pub fn bound(&self) -> f64 {
        self.cost + self.regularizer.sqrt()
    }
}

struct Regularized {
    d2: f64,
    r: f64,
    sqrt_r: f64,
    clamped: bool,
}

fn regularized(
    posterior: &DiagonalGaussian,
    prior: &DiagonalGaussian,
    m: usize,
    delta: f64,
) -> Result<Regularized, TrainError> {
    let d2 = renyi2_divergence(posterior, prior)?;
    if !d2.is_finite() {
        return Err(TrainError::InfiniteDivergence);
    }
    let r = regularizer(d2, m, delta)?;
    if r <= 0.0 {
        return Err(TrainError::NonPositiveRegularizer(r));
    }
    let clamped = r < MIN_REGULARIZER;
    let r_safe = r.max(MIN_REGULARIZER);
    Ok(Regularized { d2, r, sqrt_r: r_safe.sqrt(), clamped })
}

fn check_inputs(
    posterior: &DiagonalGaussian,
    dataset: &EnvironmentDataset,
    spec: &BenchmarkSpec,
    k: usize,
) -> Result<(), TrainError> {
    if k < 2 {
        return Err(TrainError::TooFewSamples(k));
    }
    if dataset.len() < MIN_TRAINING_SIZE {
        return Err(TrainError::TooFewEnvironments(dataset.len()));
    }
    if posterior.dim() != spec.policy_dim() {
        return Err(TrainError::PolicyDim { expected: spec.policy_dim(), got: posterior.dim() });
    }
    Ok(())
}

fn mean_cost(spec: &BenchmarkSpec, dataset: &EnvironmentDataset, w: &[f64]) -> f64 {
    let total: f64 = dataset.environments.iter().map(|e| spec.cost(e, w)).sum();
    total / dataset.len() as f64
}

fn es_estimate<R: Rng + ?Sized>(
    posterior: &DiagonalGaussian,
    prior: &DiagonalGaussian,
    dataset: &EnvironmentDataset,
    spec: &BenchmarkSpec,
    k: usize,
    delta: f64,
    rng: &mut R,
) -> Result<GradientEstimate, TrainError> {
    check_inputs(posterior, dataset, spec, k)?;
    let reg = regularized(posterior, prior, dataset.len(), delta)?;
    let weights: Vec<Vec<f64>> = (0..k).map(|_| posterior.sample(rng)).collect();
    let scale = 1.0 / (2.0 * dataset.len() as f64 * reg.sqrt_r);
    let terms: Vec<(f64, f64, GaussianGradient)> = weights
        .par_iter()
        .map(|w| {
            let cost = mean_cost(spec, dataset, w);
            let log_ratio = posterior.log_density(w)? - prior.log_density(w)?;
            let coefficient = cost + (log_ratio - reg.d2).exp() * scale;
            Ok((cost, coefficient, posterior.score(w)?))
        })
        .collect::<Result<_, DistributionError>>()?;
    let mut gradient = GaussianGradient::zeros(posterior.dim());
    let mut cost = 0.0;
    for (c, coefficient, score) in &terms {
        gradient.add_scaled(score, *coefficient);
        cost += c;
    }
    gradient.scale(1.0 / k as f64);
    Ok(GradientEstimate { gradient, cost: cost / k as f64, d2: reg.d2, regularizer: reg.r, clamped: reg.clamped })
}

/// Score-function estimate of `∇_ψ B` from `k` weight samples shared across
/// every environment of the dataset:
///
/// ```text
/// (1/k) Σ_i (C_S(w_i) + exp(ln N_ψ(w_i) - ln N_ψ0(w_i) - D2) / (2m sqrt(R))) ∇_ψ ln N_ψ(w_i)
/// ```
pub fn es_gradient<R: Rng + ?Sized>(
    posterior: &DiagonalGaussian,
    prior: &DiagonalGaussian,
    dataset: &EnvironmentDataset,
    spec: &BenchmarkSpec,
    k: usize,
    delta: f64,
    rng: &mut R,
) -> Result<GaussianGradient, TrainError> {
    Ok(es_estimate(posterior, prior, dataset, spec, k, delta, rng)?.gradient)
}

/// Reparameterised gradient of the bound on the smooth quadratic benchmark.
pub fn reparam_gradient<R: Rng + ?Sized>(
    posterior: &DiagonalGaussian,
    prior: &DiagonalGaussian,
    dataset: &EnvironmentDataset,
    spec: &BenchmarkSpec,
    k: usize,
    delta: f64,
    rng: &mut R,
) -> Result<GaussianGradient, TrainError> {
    let noise: Vec<Vec<f64>> = (0..k).map(|_| posterior.standard_noise(rng)).collect();
    Ok(reparam_estimate(posterior, prior, dataset, spec, &noise, delta)?.gradient)
}

/// [`reparam_gradient`] with caller-supplied standard-normal draws, one per
/// sampled policy.
pub fn reparam_estimate(
    posterior: &DiagonalGaussian,
    prior: &DiagonalGaussian,
    dataset: &EnvironmentDataset,
    spec: &BenchmarkSpec,
    noise: &[Vec<f64>],
    delta: f64,
) -> Result<GradientEstimate, TrainError> {
    let BenchmarkSpec::SmoothQuadratic(quad) = spec else {
        return Err(TrainError::NonSmoothBenchmark(spec.family()));
    };
    check_inputs(posterior, dataset, spec, noise.len())?;
    let reg = regularized(posterior, prior, dataset.len(), delta)?;
    let sigma: Vec<f64> = posterior.variances().map(f64::sqrt).collect();
    let m = dataset.len() as f64;
    let terms: Vec<(f64, GaussianGradient)> = noise
        .par_iter()
        .map(|z| {
            let w = posterior.reparameterize(z)?;
            let mut dw = vec![0.0; w.len()];
            let mut cost = 0.0;
            for env in &dataset.environments {
                let Environment::SmoothQuadratic(e) = env else {
                    panic!("smooth quadratic benchmark given a {} environment", "navigation");
                };
                cost += quad.cost(e, &w);
                for (acc, g) in dw.iter_mut().zip(quad.cost_gradient(e, &w)) {
                    *acc += g;
                }
            }
            let mut g = GaussianGradient::zeros(w.len());
            for j in 0..w.len() {
                g.mean[j] = dw[j] / m;
                g.log_variance[j] = dw[j] / m * 0.5 * sigma[j] * z[j];
            }
            Ok((cost / m, g))
        })
        .collect::<Result<_, DistributionError>>()?;
    let k = noise.len() as f64;
    let mut gradient = GaussianGradient::zeros(posterior.dim());
    let mut cost = 0.0;
    for (c, g) in &terms {
        gradient.add_scaled(g, 1.0 / k);
        cost += c;
    }
    let d2_grad = renyi2_gradient(posterior, prior)?.ok_or(TrainError::InfiniteDivergence)?;
    gradient.add_scaled(&d2_grad, 1.0 / (4.0 * m * reg.sqrt_r));
    Ok(GradientEstimate { gradient, cost: cost / k, d2: reg.d2, regularizer: reg.r, clamped: reg.clamped })
}

/// The bound with the expectation over the posterior replaced by the given
/// draws: `(1/k) Σ_i C_S(μ + σ ⊙ z_i) + sqrt(R)`.
pub fn sampled_bound(
    posterior: &DiagonalGaussian,
    prior: &DiagonalGaussian,
    dataset: &EnvironmentDataset,
    spec: &BenchmarkSpec,
    noise: &[Vec<f64>],
    delta: f64,
) -> Result<f64, TrainError> {
    let reg = regularized(posterior, prior, dataset.len(), delta)?;
    let mut total = 0.0;
    for z in noise {
        total += mean_cost(spec, dataset, &posterior.reparameterize(z)?);
    }
    Ok(total / noise.len() as f64 + reg.r.sqrt())
}

/// Monte-Carlo estimate of the bound at `posterior` from `samples` policies.
pub fn estimate_bound(
    posterior: &DiagonalGaussian,
    prior: &DiagonalGaussian,
    dataset: &EnvironmentDataset,
    spec: &BenchmarkSpec,
    samples: usize,
    delta: f64,
    seed: u64,
) -> Result<f64, TrainError> {
    let mut rng = seeds::rng(seed);
    let noise: Vec<Vec<f64>> = (0..samples).map(|_| posterior.standard_noise(&mut rng)).collect();
    sampled_bound(posterior, prior, dataset, spec, &noise, delta)
}

/// Runs `config.iterations` projected gradient steps starting at the prior.
pub fn train(
    prior: &DiagonalGaussian,
    dataset: &EnvironmentDataset,
    spec: &BenchmarkSpec,
    config: &TrainConfig,
) -> Result<(DiagonalGaussian, TrainTrace), TrainError> {
    config.validate()?;
    if dataset.len() < MIN_TRAINING_SIZE {
        return Err(TrainError::TooFewEnvironments(dataset.len()));
    }
    if prior.dim() != spec.policy_dim() {
        return Err(TrainError::PolicyDim { expected: spec.policy_dim(), got: prior.dim() });
    }
    let mut posterior = prior.clone();
    let mut trace = TrainTrace::default();
    for iteration in 0..config.iterations {
        let mut rng = seeds::rng(seeds::derive(config.seed, &[iteration as u64]));
        let k = config.es_samples;
        let est = match config.method {
            GradientMethod::Es => es_estimate(&posterior, prior, dataset, spec, k, config.delta, &mut rng)?,
            GradientMethod::Reparam => {
                let noise: Vec<Vec<f64>> = (0..k).map(|_| posterior.standard_noise(&mut rng)).collect();
                reparam_estimate(&posterior, prior, dataset, spec, &noise, config.delta)?
            }
        };
        if est.clamped {
            trace.warnings.push(format!(
                "iteration {iteration}: regularizer {} floored at {MIN_REGULARIZER}",
                est.regularizer
            ));
        }
        let grad_norm = est.gradient.norm();
        trace.records.push(TraceRecord { iteration, bound: est.bound(), cost: est.cost, d2: est.d2, grad_norm });
        if !grad_norm.is_finite() {
            return Err(TrainError::Diverged { iteration });
        }
        posterior = posterior
            .step(&est.gradient, config.learning_rate)
            .and_then(|p| project_variances(&p, prior, config.projection_margin))
            .map_err(|_| TrainError::Diverged { iteration })?;
        log::debug!("iteration {iteration}: bound {:.5} cost {:.5} d2 {:.5}", est.bound(), est.cost, est.d2);
    }
    Ok((posterior, trace))
}

/// Draws the single deployed policy from the posterior.
pub fn finalize_policy(posterior: &DiagonalGaussian, policy_seed: u64) -> WeightSample {
    posterior.sample_seeded(policy_seed)
}

/// Settings for fitting a navigation prior mean by regression on a dataset
/// that is disjoint from the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressionPrior {
    /// Score assigned to a primitive with clearance at or beyond `d_thresh`.
    pub temperature: f64,
    pub ridge: f64,
}

impl Default for RegressionPrior {
    fn default() -> Self {
        Self { temperature: 8.0, ridge: 1e-3 }
    }
}

/// Least-squares fit of the navigation score map to the targets
/// `temperature · min(clearance_k, d_thresh) / d_thresh`, so that larger
/// scores go to primitives with more clearance.
///
/// Returns the weight vector in the policy layout (rows `[W_k | b_k]`).
pub fn fit_nav_prior_mean(
    spec: &NavSpec,
    dataset: &EnvironmentDataset,
    settings: &RegressionPrior,
) -> Result<Vec<f64>, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::TooFewEnvironments(0));
    }
    let EnvDistributionParams::PrimitiveNav(_) = dataset.params else {
        return Err(TrainError::InvalidConfig("regression prior needs a navigation dataset".into()));
    };
    let cols = spec.depth_bins + 1;
    let n = dataset.len();
    let mut x = DMatrix::<f64>::zeros(n, cols);
    let mut y = DMatrix::<f64>::zeros(n, spec.primitives);
    for (i, env) in dataset.environments.iter().enumerate() {
        let Environment::PrimitiveNav(e) = env else {
            return Err(TrainError::InvalidConfig("regression prior needs a navigation dataset".into()));
        };
        for (j, o) in e.depth.iter().enumerate() {
            x[(i, j)] = *o;
        }
        x[(i, spec.depth_bins)] = 1.0;
        for k in 0..spec.primitives {
            y[(i, k)] = settings.temperature * e.clearance[k].min(spec.d_thresh) / spec.d_thresh;
        }
    }
    let mut gram = x.transpose() * &x;
    for j in 0..cols {
        gram[(j, j)] += settings.ridge * n as f64;
    }
    let rhs = x.transpose() * y;
    let chol = gram
        .cholesky()
        .ok_or_else(|| TrainError::InvalidConfig("regression system is singular; increase ridge".into()))?;
    let theta = chol.solve(&rhs);
    let mut weights = Vec::with_capacity(spec.policy_dim());
    for k in 0..spec.primitives {
        let col: DVector<f64> = theta.column(k).into_owned();
        weights.extend(col.iter());
    }
    Ok(weights)
}
