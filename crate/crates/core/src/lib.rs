//! Derandomized PAC-Bayes certificates for policies and task-driven
//! out-of-distribution detection with guaranteed error rates.
//!
//! The pipeline is:
//!
//! 1. pick a data-independent prior over policy weights ([`distributions`]),
//! 2. minimise the PAC-Bayes upper bound over a diagonal-Gaussian posterior
//!    on a training dataset ([`training`], [`benchmarks`]),
//! 3. draw one fixed policy from the posterior and certify it
//!    ([`certificates`]),
//! 4. after deployment on a handful of test environments, declare the test
//!    distribution OOD, WD or unknown ([`detectors`]).
//!
//! [`harness`] reproduces the evaluation protocols (guarantee validation,
//! difficulty sweeps, rate tuning, baseline comparison) on the synthetic
//! benchmarks and [`cli`] binds them to config files.
//!
//! Runnable examples live in `crates/core/examples/`, one per capability.

pub mod benchmarks;
pub mod certificates;
pub mod cli;
pub mod detectors;
pub mod distributions;
pub mod harness;
pub mod seeds;
mod serde_ext;
pub mod training;

pub use benchmarks::{
    dataset_cost, expected_cost_oracle, nuisance_shift, rollout, sample_dataset, BenchmarkSpec,
    EnvDistributionParams, Environment, EnvironmentDataset, EpisodeResult, OracleEstimate,
};
pub use certificates::{build_certificate, regularizer, Certificate, CertificateFile};
pub use detectors::{
    detect_confidence_interval, detect_hypothesis, CertificatePair, DetectionVerdict, Verdict,
};
pub use distributions::{
    project_variances, renyi2_divergence, DiagonalGaussian, GaussianGradient, WeightSample,
};
pub use training::{es_gradient, finalize_policy, reparam_gradient, train, TrainConfig, TrainTrace};
