//! Verdict fractions as a function of the permitted error rates.
//!
//! A grid point `(r_O, r_W)` is the total false-positive and false-negative
//! budget of the detectors. `δ_O` and `δ_W` stay at their configured values
//! (the certificates are reused) and the remainder `r - δ` becomes `δ'` for
//! the confidence-interval detector and `α` for the hypothesis-testing one.

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::pipeline::{prepare, Prepared};
use super::sweep::{certified_summaries, DetectorSummary};
use super::HarnessError;
use crate::detectors::CertificatePair;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCell {
    pub label: String,
    pub gap: f64,
    pub gap_se: f64,
    pub detectors: Vec<DetectorSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    /// `(δ_O + δ'_O, δ_W + δ'_W)`.
    pub rates: [f64; 2],
    /// `(δ'_O, δ'_W)`, also used as `(α_O, α_W)`.
    pub primes: [f64; 2],
    pub cells: Vec<RateCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub run_id: String,
    pub n: usize,
    pub points: Vec<RatePoint>,
}

impl RateReport {
    pub fn point(&self, rates: [f64; 2]) -> Option<&RatePoint> {
        self.points.iter().find(|p| p.rates == rates)
    }
}

/// Evaluates every rate setting on the cached test statistics and checks
/// that the Unknown fraction never grows when both rates grow.
pub fn rate_tuning_prepared(
    config: &ExperimentConfig,
    prepared: &Prepared,
    rate_grid: &[[f64; 2]],
) -> Result<RateReport, HarnessError> {
    let d = &config.detectors;
    let certs = CertificatePair::new(&prepared.certified.upper, &prepared.certified.lower)?;
    let mut points = Vec::with_capacity(rate_grid.len());
    for &rates in rate_grid {
        let primes = config.rate_split(rates)?;
        let cells = prepared
            .cells
            .iter()
            .map(|cell| {
                let summaries = certified_summaries(cell, certs, config.n, [d.delta_o, d.delta_w], primes, primes)?;
                Ok(RateCell {
                    label: cell.label.clone(),
                    gap: cell.gap,
                    gap_se: cell.gap_se,
                    detectors: summaries.to_vec(),
                })
            })
            .collect::<Result<Vec<_>, HarnessError>>()?;
        points.push(RatePoint { rates, primes, cells });
    }
    let report = RateReport { run_id: config.run_id.clone(), n: config.n, points };
    check_monotone(&report)?;
    Ok(report)
}

fn check_monotone(report: &RateReport) -> Result<(), HarnessError> {
    for lo in &report.points {
        for hi in &report.points {
            let dominated = lo.rates[0] <= hi.rates[0] && lo.rates[1] <= hi.rates[1] && lo.rates != hi.rates;
            if !dominated {
                continue;
            }
            for (a, b) in lo.cells.iter().zip(&hi.cells) {
                for (da, db) in a.detectors.iter().zip(&b.detectors) {
                    let (from, to) = (da.rate("UNKNOWN").rate, db.rate("UNKNOWN").rate);
                    if to > from {
                        return Err(HarnessError::NonMonotone {
                            cell: a.label.clone(),
                            detector: da.detector.as_str(),
                            lo: lo.rates,
                            hi: hi.rates,
                            from,
                            to,
                        });
                    }
                }
            }
        }
    }
    Ok(())
}

/// Prepares the run and evaluates `rate_grid`.
pub fn run_rate_tuning(config: &ExperimentConfig, rate_grid: &[[f64; 2]]) -> Result<RateReport, HarnessError> {
    for &rates in rate_grid {
        config.rate_split(rates)?;
    }
    let prepared = prepare(config)?;
    rate_tuning_prepared(config, &prepared, rate_grid)
}
