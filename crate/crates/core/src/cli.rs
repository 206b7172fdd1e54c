//! Command-line front end.
//!
//! ```text
//! boundwatch train    --config run.json
//! boundwatch certify  --posterior p.json --prior p0.json --costs costs.csv --delta 0.01 --m 500
//! boundwatch detect   --cert certificate.json --costs test.csv --method ci --rates 0.04,0.04
//! boundwatch sweep    --config run.json
//! boundwatch validate --config run.json
//! ```
//!
//! `detect` exits with 0 for WD, 1 for OOD and 3 for Unknown; every error
//! exits with 2.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::benchmarks::sample_dataset;
use crate::certificates::{build_certificate, CertificateError, CertificateFile};
use crate::detectors::{detect_confidence_interval, detect_hypothesis, CertificatePair, DetectorError, Verdict};
use crate::distributions::{renyi2_divergence, DiagonalGaussian, DistributionError};
use crate::harness::pipeline::{build_prior, prepare, train_and_certify};
use crate::harness::rates::rate_tuning_prepared;
use crate::harness::sweep::sweep_prepared;
use crate::harness::{persist_results, run_guarantee_validation, with_thread_pool, ExperimentConfig, HarnessError, RunOutput};
use crate::seeds::{self, stream};

pub const EXIT_WD: i32 = 0;
pub const EXIT_OOD: i32 = 1;
pub const EXIT_ERROR: i32 = 2;
pub const EXIT_UNKNOWN: i32 = 3;

const EXIT_HELP: &str = "\
Exit codes for `detect`: 0 = WD, 1 = OOD, 3 = UNKNOWN, 2 = error.
BOUNDWATCH_THREADS caps the number of worker threads.";

#[derive(Debug, Clone, PartialEq, Parser)]
#[command(name = "boundwatch", version, about = "Certified task-driven OOD detection", after_help = EXIT_HELP)]
#[command(arg_required_else_help = true)]
pub struct CliCommand {
    #[command(subcommand)]
    pub command: Command,
    /// Overrides the master seed of the config (or the policy seed of `certify`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Clone, PartialEq, Subcommand)]
pub enum Command {
    /// Train a posterior, draw the policy and certify it.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Certify a policy from its per-environment training costs.
    Certify {
        #[arg(long)]
        posterior: PathBuf,
        #[arg(long)]
        prior: PathBuf,
        /// One cost in [0, 1] per line.
        #[arg(long)]
        costs: PathBuf,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        policy_seed: Option<u64>,
    },
    /// Declare a test dataset OOD, WD or UNKNOWN.
    Detect {
        #[arg(long)]
        cert: PathBuf,
        /// One test cost in [0, 1] per line.
        #[arg(long)]
        costs: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Ht)]
        method: Method,
        /// `α_O,α_W` for ht or `δ'_O,δ'_W` for ci.
        #[arg(long, value_delimiter = ',')]
        rates: Option<Vec<f64>>,
    },
    /// Run the detection sweep (and rate study, if configured).
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the guarantee validation protocol.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Hypothesis testing.
    Ht,
    /// Confidence intervals.
    Ci,
}

impl Method {
    pub fn default_rates(self) -> [f64; 2] {
        match self {
            Method::Ht => [0.05, 0.05],
            Method::Ci => [0.04, 0.04],
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("{path}, line {line}: {message}")]
    Costs { path: String, line: u64, message: String },
    #[error("{0}: no costs found")]
    EmptyCosts(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Certificate(#[from] CertificateError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

/// Parses arguments (without the program name).
pub fn parse_args<I, T>(argv: I) -> Result<CliCommand, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    CliCommand::try_parse_from(std::iter::once(std::ffi::OsString::from("boundwatch")).chain(argv.into_iter().map(Into::into)))
}

/// Reads one cost per line, checking range and format.
pub fn read_costs(path: &Path) -> Result<Vec<f64>, CliError> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: name.clone(), source })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
    let mut costs = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Costs {
            path: name.clone(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let err = |message: String| CliError::Costs { path: name.clone(), line, message };
        if record.len() != 1 {
            return Err(err(format!("expected one value, found {}", record.len())));
        }
        let field = record[0].trim();
        let cost: f64 = field.parse().map_err(|_| err(format!("{field:?} is not a number")))?;
        if !(0.0..=1.0).contains(&cost) {
            return Err(err(format!("cost {cost} is outside [0, 1]")));
        }
        costs.push(cost);
    }
    if costs.is_empty() {
        return Err(CliError::EmptyCosts(name));
    }
    Ok(costs)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: name.clone(), source })?;
    serde_json::from_str(&text).map_err(|source| CliError::Json { path: name, source })
}

/// Runs the detector on a cost file; returns the exit code and verdict line.
pub fn run_detect_file(
    cert_path: &Path,
    costs_path: &Path,
    method: Method,
    rates: Option<[f64; 2]>,
) -> Result<(i32, String), CliError> {
    let file = CertificateFile::load(cert_path)?;
    let costs = read_costs(costs_path)?;
    let n = costs.len();
    let test_cost = costs.iter().sum::<f64>() / n as f64;
    let certs = CertificatePair::single(&file.certificate);
    let [a, b] = rates.unwrap_or_else(|| method.default_rates());
    let delta = file.certificate.delta;
    let verdict = match method {
        Method::Ht => detect_hypothesis(test_cost, n, certs, a, b)?,
        Method::Ci => detect_confidence_interval(test_cost, n, certs, delta, a, delta, b)?,
    };
    let code = match verdict.verdict {
        Verdict::Wd => EXIT_WD,
        Verdict::Ood => EXIT_OOD,
        Verdict::Unknown => EXIT_UNKNOWN,
    };
    Ok((code, verdict.to_string()))
}

fn load_config(path: &Path, cli: &CliCommand) -> Result<ExperimentConfig, CliError> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    Ok(config)
}

fn persist(config: &ExperimentConfig, mut output: RunOutput) -> Result<PathBuf, CliError> {
    output.config = Some(config.clone());
    Ok(persist_results(&output, &config.output_dir, &config.run_id)?)
}

/// Executes a parsed command and returns the process exit code.
pub fn run(cli: &CliCommand) -> Result<i32, CliError> {
    match &cli.command {
        Command::Train { config } => {
            let config = load_config(config, cli)?;
            let certified = with_thread_pool(|| -> Result<_, HarnessError> {
                let prior = build_prior(&config)?;
                let data = sample_dataset(
                    &config.benchmark,
                    &config.train_params,
                    config.m,
                    seeds::derive(config.seed, &[stream::TRAIN_DATA]),
                )?;
                train_and_certify(
                    &config,
                    &prior,
                    &data,
                    seeds::derive(config.seed, &[stream::TRAINING]),
                    seeds::derive(config.seed, &[stream::POLICY]),
                )
            })?;
            let c = &certified.upper;
            let dir = persist(
                &config,
                RunOutput {
                    certificate: Some(certified.certificate_file()),
                    trace: Some(certified.trace.clone()),
                    ..RunOutput::default()
                },
            )?;
            println!(
                "C_S={:.6} D2={:.6} bounds=[{:.6}, {:.6}] -> {}",
                c.empirical_cost,
                c.d2,
                certified.lower.lower_bound,
                c.upper_bound,
                dir.display()
            );
            Ok(0)
        }
        Command::Certify { posterior, prior, costs, delta, m, policy_seed } => {
            let posterior: DiagonalGaussian = read_json(posterior)?;
            let prior: DiagonalGaussian = read_json(prior)?;
            let values = read_costs(costs)?;
            if values.len() != *m {
                return Err(CliError::Usage(format!("--m {m} does not match the {} costs in the file", values.len())));
            }
            let cost = values.iter().sum::<f64>() / values.len() as f64;
            let d2 = renyi2_divergence(&posterior, &prior)?;
            let seed = policy_seed.or(cli.seed).unwrap_or(0);
            let cert = build_certificate(cost, d2, *m, *delta, seed)?;
            let file = CertificateFile::new(cert, prior, posterior);
            match &cli.out {
                Some(dir) => {
                    fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.display().to_string(), source })?;
                    file.save(&dir.join("certificate.json"))?;
                    println!("{}", dir.join("certificate.json").display());
                }
                None => println!("{}", file.to_json()),
            }
            Ok(0)
        }
        Command::Detect { cert, costs, method, rates } => {
            let rates = match rates.as_deref() {
                None => None,
                Some(&[a, b]) => Some([a, b]),
                Some(_) => return Err(CliError::Usage("--rates takes exactly two comma-separated values".into())),
            };
            let (code, line) = run_detect_file(cert, costs, *method, rates)?;
            println!("{line}");
            Ok(code)
        }
        Command::Sweep { config } => {
            let config = load_config(config, cli)?;
            if config.test_grid.is_empty() {
                return Err(CliError::Usage("the config has an empty test_grid".into()));
            }
            let (prepared, sweep, rates) = with_thread_pool(|| -> Result<_, HarnessError> {
                let prepared = prepare(&config)?;
                let sweep = sweep_prepared(&config, &prepared)?;
                let rates = if config.rate_grid.is_empty() {
                    None
                } else {
                    Some(rate_tuning_prepared(&config, &prepared, &config.rate_grid)?)
                };
                Ok((prepared, sweep, rates))
            })?;
            let dir = persist(
                &config,
                RunOutput {
                    certificate: Some(prepared.certified.certificate_file()),
                    trace: Some(prepared.certified.trace.clone()),
                    sweep: Some(sweep),
                    rates,
                    ..RunOutput::default()
                },
            )?;
            println!("{}", dir.display());
            Ok(0)
        }
        Command::Validate { config } => {
            let config = load_config(config, cli)?;
            let report = with_thread_pool(|| run_guarantee_validation(&config))?;
            println!(
                "upper violations {:.4} lower violations {:.4} (delta {}), FP ci {:.4} ht {:.4}, FN ci {:.4} ht {:.4}, gap validity {:.4}",
                report.upper_violation.observed.rate,
                report.lower_violation.observed.rate,
                report.coverage_delta,
                report.false_positive_ci.observed.rate,
                report.false_positive_ht.observed.rate,
                report.false_negative_ci.observed.rate,
                report.false_negative_ht.observed.rate,
                report.gap_bound_validity.rate,
            );
            let dir = persist(&config, RunOutput { validation: Some(report), ..RunOutput::default() })?;
            println!("{}", dir.display());
            Ok(0)
        }
    }
}

/// Maps `-v` counts to a log filter.
pub fn log_level(verbose: u8) -> log::LevelFilter {
    match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    }
}
