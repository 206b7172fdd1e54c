//! Monte-Carlo experiment orchestration.
//!
//! A run is described by an [`ExperimentConfig`]. [`prepare`] performs the
//! expensive, shared part once (prior, training, certificate, oracle costs,
//! baseline calibration, and the per-trial test statistics of every grid
//! cell); [`sweep`] and [`rates`] then only apply detectors to those cached
//! statistics, so every detector and rate setting sees the same test
//! datasets. [`validation`] re-runs the whole pipeline per trial to check the
//! guarantees empirically.
//!
//! All random streams are derived from the master seed by counter
//! (`derive(seed, [stream, cell, trial, ...])`), work is spread with rayon,
//! and reductions happen in index order: output files are byte-identical
//! for any thread count.

pub mod config;
pub mod persist;
pub mod pipeline;
pub mod rates;
pub mod sweep;
pub mod validation;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{DetectorSettings, ExperimentConfig, GridCell, PriorConfig, TrainingSettings, ValidationSettings};
pub use persist::{load_sweep, persist_results, RunOutput};
pub use pipeline::{prepare, Prepared};
pub use rates::{run_rate_tuning, RateReport};
pub use sweep::{run_detection_sweep, SweepResult};
pub use validation::{run_guarantee_validation, ValidationReport};

use crate::benchmarks::BenchmarkError;
use crate::certificates::CertificateError;
use crate::detectors::DetectorError;
use crate::distributions::DistributionError;
use crate::training::TrainError;

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "BOUNDWATCH_THREADS";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("unknown fraction increased from {from} to {to} on cell {cell:?} when rates grew from {lo:?} to {hi:?} ({detector})")]
    NonMonotone { cell: String, detector: &'static str, lo: [f64; 2], hi: [f64; 2], from: f64, to: f64 },
    #[error(transparent)]
    Benchmark(#[from] BenchmarkError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Certificate(#[from] CertificateError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }

    pub(crate) fn json(path: &Path, source: serde_json::Error) -> Self {
        Self::Json { path: path.display().to_string(), source }
    }

    pub(crate) fn csv(path: &Path, source: csv::Error) -> Self {
        Self::Csv { path: path.display().to_string(), source }
    }
}

/// An empirical frequency with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub count: usize,
    pub trials: usize,
    pub rate: f64,
    pub std_error: f64,
}

impl Rate {
    pub fn new(count: usize, trials: usize) -> Self {
        let rate = if trials == 0 { 0.0 } else { count as f64 / trials as f64 };
        let std_error = if trials == 0 { 0.0 } else { (rate * (1.0 - rate) / trials as f64).sqrt() };
        Self { count, trials, rate, std_error }
    }

    /// `rate ± z · std_error`, clipped to `[0, 1]`.
    pub fn band(&self, z: f64) -> (f64, f64) {
        ((self.rate - z * self.std_error).max(0.0), (self.rate + z * self.std_error).min(1.0))
    }

    /// Standard error of a rate equal to `p` over this many trials.
    pub fn std_error_at(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.trials.max(1) as f64).sqrt()
    }
}

/// Worker count requested through [`THREADS_ENV`], if any.
pub fn configured_threads() -> Option<usize> {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()).filter(|&n| n > 0)
}

/// Runs `f` inside a rayon pool sized by [`THREADS_ENV`] (or the global pool
/// when unset).
pub fn with_thread_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match configured_threads() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool builds")
            .install(f),
        None => f(),
    }
}

/// Runs `f` in a pool with exactly `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("thread pool builds")
        .install(f)
}
