//! Verdict fractions per test distribution, for both certified detectors and
//! both baselines.

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::pipeline::{prepare, Prepared, PreparedCell};
use super::{HarnessError, Rate};
use crate::benchmarks::OracleEstimate;
use crate::detectors::baseline::{self, BaselineCalibration, BaselineVerdict};
use crate::detectors::{detect_confidence_interval, detect_hypothesis, CertificatePair, Indicators, Verdict};
use crate::serde_ext::extended_f64_signed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DetectorKind {
    #[serde(rename = "HT")]
    Hypothesis,
    #[serde(rename = "CI")]
    ConfidenceInterval,
    #[serde(rename = "MSP")]
    Msp,
    MaxLogit,
}

const CERTIFIED_LABELS: [&str; 3] = ["OOD", "WD", "UNKNOWN"];
const BASELINE_LABELS: [&str; 2] = ["OOD", "NOT_OOD"];

impl DetectorKind {
    pub const ALL: [DetectorKind; 4] =
        [DetectorKind::Hypothesis, DetectorKind::ConfidenceInterval, DetectorKind::Msp, DetectorKind::MaxLogit];

    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::Hypothesis => "HT",
            DetectorKind::ConfidenceInterval => "CI",
            DetectorKind::Msp => "MSP",
            DetectorKind::MaxLogit => "MaxLogit",
        }
    }

    /// Verdicts this detector can return, in reporting order.
    pub fn verdict_labels(self) -> &'static [&'static str] {
        match self {
            DetectorKind::Hypothesis | DetectorKind::ConfidenceInterval => &CERTIFIED_LABELS,
            DetectorKind::Msp | DetectorKind::MaxLogit => &BASELINE_LABELS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanIndicator {
    pub name: String,
    #[serde(with = "extended_f64_signed")]
    pub value: f64,
}

/// Verdict counts of one detector on one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSummary {
    pub detector: DetectorKind,
    pub trials: usize,
    /// Aligned with [`DetectorKind::verdict_labels`].
    pub counts: Vec<usize>,
    pub indicators: Vec<MeanIndicator>,
}

impl DetectorSummary {
    /// Frequency of `label`; zero for labels the detector never returns.
    pub fn rate(&self, label: &str) -> Rate {
        let count = self
            .detector
            .verdict_labels()
            .iter()
            .position(|l| *l == label)
            .map_or(0, |i| self.counts[i]);
        Rate::new(count, self.trials)
    }

    pub fn indicator(&self, name: &str) -> Option<f64> {
        self.indicators.iter().find(|i| i.name == name).map(|i| i.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub label: String,
    pub test_cost: OracleEstimate,
    pub gap: f64,
    pub gap_se: f64,
    pub detectors: Vec<DetectorSummary>,
}

impl CellResult {
    pub fn detector(&self, kind: DetectorKind) -> &DetectorSummary {
        self.detectors.iter().find(|d| d.detector == kind).expect("every detector is tabulated")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub run_id: String,
    pub n: usize,
    pub trials_per_cell: usize,
    pub certificate_id: String,
    pub empirical_cost: f64,
    pub upper_bound: f64,
    pub lower_bound: f64,
    pub train_cost: OracleEstimate,
    pub cells: Vec<CellResult>,
}

fn mean(values: impl Iterator<Item = f64>, count: usize) -> f64 {
    values.sum::<f64>() / count.max(1) as f64
}

fn indicator(name: &str, value: f64) -> MeanIndicator {
    MeanIndicator { name: name.to_string(), value }
}

/// Runs both certified detectors on every trial of a cell.
///
/// `ht_alphas` are `(α_O, α_W)`, `ci_primes` are `(δ'_O, δ'_W)`.
pub(crate) fn certified_summaries(
    cell: &PreparedCell,
    certs: CertificatePair<'_>,
    n: usize,
    deltas: [f64; 2],
    ht_alphas: [f64; 2],
    ci_primes: [f64; 2],
) -> Result<[DetectorSummary; 2], HarnessError> {
    let trials = cell.trials.len();
    let mut ht_counts = vec![0; 3];
    let mut ci_counts = vec![0; 3];
    let (mut p_ood, mut p_wd, mut dco, mut dcw) = (0.0, 0.0, 0.0, 0.0);
    let slot = |v: Verdict| Verdict::ALL.iter().position(|x| *x == v).expect("verdict listed");
    for t in &cell.trials {
        let ht = detect_hypothesis(t.test_cost, n, certs, ht_alphas[0], ht_alphas[1])?;
        let ci = detect_confidence_interval(t.test_cost, n, certs, deltas[0], ci_primes[0], deltas[1], ci_primes[1])?;
        ht_counts[slot(ht.verdict)] += 1;
        ci_counts[slot(ci.verdict)] += 1;
        if let Indicators::Hypothesis { p_bound_ood, p_bound_wd, .. } = ht.indicators {
            p_ood += p_bound_ood;
            p_wd += p_bound_wd;
        }
        if let Indicators::ConfidenceInterval { delta_c_o, delta_c_w, .. } = ci.indicators {
            dco += delta_c_o;
            dcw += delta_c_w;
        }
    }
    let nt = trials.max(1) as f64;
    Ok([
        DetectorSummary {
            detector: DetectorKind::Hypothesis,
            trials,
            counts: ht_counts,
            indicators: vec![indicator("mean_p_bound_ood", p_ood / nt), indicator("mean_p_bound_wd", p_wd / nt)],
        },
        DetectorSummary {
            detector: DetectorKind::ConfidenceInterval,
            trials,
            counts: ci_counts,
            indicators: vec![indicator("mean_delta_c_o", dco / nt), indicator("mean_delta_c_w", dcw / nt)],
        },
    ])
}

fn baseline_summary(
    cell: &PreparedCell,
    kind: DetectorKind,
    slot: usize,
    calibration: &BaselineCalibration,
) -> Result<DetectorSummary, HarnessError> {
    let mut ood = 0;
    for t in &cell.trials {
        if baseline::detect(calibration, &[t.baseline_scores[slot]])? == BaselineVerdict::Ood {
            ood += 1;
        }
    }
    let trials = cell.trials.len();
    Ok(DetectorSummary {
        detector: kind,
        trials,
        counts: vec![ood, trials - ood],
        indicators: vec![
            indicator("mean_score", mean(cell.trials.iter().map(|t| t.baseline_scores[slot]), trials)),
            indicator("threshold", calibration.threshold),
        ],
    })
}

/// Tabulates a prepared run at the configured detector settings.
pub fn sweep_prepared(config: &ExperimentConfig, prepared: &Prepared) -> Result<SweepResult, HarnessError> {
    let d = &config.detectors;
    let cert = &prepared.certified;
    let certs = CertificatePair::new(&cert.upper, &cert.lower)?;
    let mut cells = Vec::with_capacity(prepared.cells.len());
    for cell in &prepared.cells {
        let [ht, ci] = certified_summaries(
            cell,
            certs,
            config.n,
            [d.delta_o, d.delta_w],
            [d.alpha_o, d.alpha_w],
            [d.delta_o_prime, d.delta_w_prime],
        )?;
        let msp = baseline_summary(cell, DetectorKind::Msp, 0, &prepared.calibrations[0])?;
        let max_logit = baseline_summary(cell, DetectorKind::MaxLogit, 1, &prepared.calibrations[1])?;
        cells.push(CellResult {
            label: cell.label.clone(),
            test_cost: cell.oracle,
            gap: cell.gap,
            gap_se: cell.gap_se,
            detectors: vec![ht, ci, msp, max_logit],
        });
    }
    Ok(SweepResult {
        run_id: config.run_id.clone(),
        n: config.n,
        trials_per_cell: config.trials_per_cell,
        certificate_id: cert.upper.id(),
        empirical_cost: cert.upper.empirical_cost,
        upper_bound: cert.upper.upper_bound,
        lower_bound: cert.lower.lower_bound,
        train_cost: prepared.train_cost,
        cells,
    })
}

/// Prepares the run and tabulates every grid cell.
pub fn run_detection_sweep(config: &ExperimentConfig) -> Result<SweepResult, HarnessError> {
    if config.test_grid.is_empty() {
        return Err(HarnessError::Config("test_grid is empty".into()));
    }
    let prepared = prepare(config)?;
    sweep_prepared(config, &prepared)
}
