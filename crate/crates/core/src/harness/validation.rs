//! Empirical check of the guarantees, retraining from a fresh training set in
//! every trial.
//!
//! Per trial: sample `S`, train, draw `π`, certify, estimate `C_D(π)` and
//! `C_D'(π)` with the oracle, then detect on fresh test datasets from the
//! training distribution (where any OOD verdict is a false positive) and
//! from the harder `ood_params` (where any WD verdict is a false negative).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ValidationSettings};
use super::pipeline::{build_prior, train_and_certify};
use super::{HarnessError, Rate};
use crate::benchmarks::{expected_cost_oracle, sample_dataset, BenchmarkSpec, EnvDistributionParams};
use crate::certificates::build_certificate;
use crate::detectors::{detect_confidence_interval, detect_hypothesis, CertificatePair, Indicators, Verdict};
use crate::seeds::{self, stream};

/// A rate together with the level it should stay under.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckedRate {
    pub observed: Rate,
    pub bound: f64,
}

impl CheckedRate {
    /// Within `z` standard errors (evaluated at the bound) of the bound.
    pub fn holds(&self, z: f64) -> bool {
        self.observed.rate <= self.bound + z * self.observed.std_error_at(self.bound)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub run_id: String,
    pub trials: usize,
    pub m: usize,
    pub n: usize,
    pub datasets_per_trial: usize,
    pub coverage_delta: f64,
    pub upper_violation: CheckedRate,
    pub lower_violation: CheckedRate,
    pub false_positive_ci: CheckedRate,
    pub false_positive_ht: CheckedRate,
    pub false_negative_ci: CheckedRate,
    pub false_negative_ht: CheckedRate,
    pub gap_confidence: f64,
    /// Frequency with which `ΔC_O` at the gap confidence lies below the true
    /// `C_D' - C_D`; the bound field holds the target confidence.
    pub gap_bound_validity: Rate,
    pub mean_train_cost: f64,
    pub mean_true_cost: f64,
    pub mean_upper_bound: f64,
    pub mean_ood_gap: f64,
    /// Trials whose oracle gap on `ood_params` was not positive; their
    /// datasets are excluded from the false-negative count.
    pub nonpositive_ood_gaps: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct TrialOutcome {
    train_cost: f64,
    true_cost: f64,
    upper_bound: f64,
    ood_gap: f64,
    upper_violated: bool,
    lower_violated: bool,
    fp_ci: usize,
    fp_ht: usize,
    fn_ci: usize,
    fn_ht: usize,
    fn_eligible: usize,
    gap_valid: usize,
}

fn mean_cost(spec: &BenchmarkSpec, params: &EnvDistributionParams, weights: &[f64], n: usize, seed: u64) -> f64 {
    let total: f64 = (0..n as u64)
        .map(|i| spec.cost(&spec.sample_environment(params, seeds::derive(seed, &[i])), weights))
        .sum();
    total / n as f64
}

fn run_trial(
    config: &ExperimentConfig,
    v: &ValidationSettings,
    prior: &crate::distributions::DiagonalGaussian,
    t: u64,
) -> Result<TrialOutcome, HarnessError> {
    let spec = &config.benchmark;
    let d = &config.detectors;
    let seed = seeds::derive(config.seed, &[stream::TRIAL, t]);
    let data = sample_dataset(spec, &config.train_params, config.m, seeds::derive(seed, &[stream::TRAIN_DATA]))?;
    let cert = train_and_certify(
        config,
        prior,
        &data,
        seeds::derive(seed, &[stream::TRAINING]),
        seeds::derive(seed, &[stream::POLICY]),
    )?;
    let w = &cert.policy.weights;
    let coverage = build_certificate(cert.upper.empirical_cost, cert.upper.d2, config.m, v.coverage_delta, 0)?;
    let oracle_seed = seeds::derive(seed, &[stream::ORACLE]);
    let true_cost = expected_cost_oracle(spec, &config.train_params, w, config.oracle_samples, oracle_seed)?.estimate;
    let ood_cost = expected_cost_oracle(spec, &v.ood_params, w, config.oracle_samples, oracle_seed)?.estimate;
    let certs = CertificatePair::new(&cert.upper, &cert.lower)?;
    let gap_prime = 1.0 - v.gap_confidence - d.delta_o;
    let mut out = TrialOutcome {
        train_cost: cert.upper.empirical_cost,
        true_cost,
        upper_bound: coverage.upper_bound,
        ood_gap: ood_cost - true_cost,
        upper_violated: true_cost > coverage.upper_bound,
        lower_violated: true_cost < coverage.lower_bound,
        ..TrialOutcome::default()
    };
    let ci = |cost: f64, o_prime: f64| {
        detect_confidence_interval(cost, config.n, certs, d.delta_o, o_prime, d.delta_w, d.delta_w_prime)
    };
    let ht = |cost: f64| detect_hypothesis(cost, config.n, certs, d.alpha_o, d.alpha_w);
    for j in 0..v.datasets_per_trial as u64 {
        let wd_cost = mean_cost(spec, &config.train_params, w, config.n, seeds::derive(seed, &[stream::TEST_DATA, 0, j]));
        out.fp_ci += usize::from(ci(wd_cost, d.delta_o_prime)?.verdict == Verdict::Ood);
        out.fp_ht += usize::from(ht(wd_cost)?.verdict == Verdict::Ood);

        let ood = mean_cost(spec, &v.ood_params, w, config.n, seeds::derive(seed, &[stream::TEST_DATA, 1, j]));
        if out.ood_gap > 0.0 {
            out.fn_eligible += 1;
            out.fn_ci += usize::from(ci(ood, d.delta_o_prime)?.verdict == Verdict::Wd);
            out.fn_ht += usize::from(ht(ood)?.verdict == Verdict::Wd);
        }
        if let Indicators::ConfidenceInterval { delta_c_o, .. } = ci(ood, gap_prime)?.indicators {
            out.gap_valid += usize::from(delta_c_o <= out.ood_gap);
        }
    }
    Ok(out)
}

pub fn run_guarantee_validation(config: &ExperimentConfig) -> Result<ValidationReport, HarnessError> {
    config.validate()?;
    let v = config
        .validation
        .as_ref()
        .ok_or_else(|| HarnessError::Config("the config has no validation section".into()))?;
    let prior = build_prior(config)?;
    let outcomes = (0..v.trials as u64)
        .into_par_iter()
        .map(|t| run_trial(config, v, &prior, t))
        .collect::<Result<Vec<_>, _>>()?;
    let d = &config.detectors;
    let datasets = v.trials * v.datasets_per_trial;
    let fn_eligible: usize = outcomes.iter().map(|o| o.fn_eligible).sum();
    let sum = |f: fn(&TrialOutcome) -> usize| outcomes.iter().map(f).sum::<usize>();
    let avg = |f: fn(&TrialOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / outcomes.len() as f64;
    let checked = |count, trials, bound| CheckedRate { observed: Rate::new(count, trials), bound };
    Ok(ValidationReport {
        run_id: config.run_id.clone(),
        trials: v.trials,
        m: config.m,
        n: config.n,
        datasets_per_trial: v.datasets_per_trial,
        coverage_delta: v.coverage_delta,
        upper_violation: checked(sum(|o| usize::from(o.upper_violated)), v.trials, v.coverage_delta),
        lower_violation: checked(sum(|o| usize::from(o.lower_violated)), v.trials, v.coverage_delta),
        false_positive_ci: checked(sum(|o| o.fp_ci), datasets, d.delta_o + d.delta_o_prime),
        false_positive_ht: checked(sum(|o| o.fp_ht), datasets, d.delta_o + d.alpha_o),
        false_negative_ci: checked(sum(|o| o.fn_ci), fn_eligible, d.delta_w + d.delta_w_prime),
        false_negative_ht: checked(sum(|o| o.fn_ht), fn_eligible, d.delta_w + d.alpha_w),
        gap_confidence: v.gap_confidence,
        gap_bound_validity: Rate::new(sum(|o| o.gap_valid), datasets),
        mean_train_cost: avg(|o| o.train_cost),
        mean_true_cost: avg(|o| o.true_cost),
        mean_upper_bound: avg(|o| o.upper_bound),
        mean_ood_gap: avg(|o| o.ood_gap),
        nonpositive_ood_gaps: outcomes.iter().filter(|o| o.ood_gap <= 0.0).count(),
    })
}
