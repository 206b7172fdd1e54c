//! Task-driven OOD detection from the costs a certified policy incurs on a
//! small test dataset `S'` of size `n`.
//!
//! Both certified detectors compare the test cost `C_S'(π)` against the
//! certificate interval `[lower, upper]` with Hoeffding slack for `n`:
//!
//! * [`detect_hypothesis`] bounds the p-values of the hypotheses
//!   "the test distribution is WD" and "is OOD" by `exp(-2 n τ²)`, where
//!   `τ̄ = max(C_S' - upper, 0)` and `τ̲ = max(lower - C_S', 0)`.
//! * [`detect_confidence_interval`] lower-bounds `C_D' - C_D` by
//!   `ΔC_O = C_S' - γ_O - upper` and `C_D - C_D'` by
//!   `ΔC_W = lower - C_S' - γ_W`, with `γ = sqrt(ln(1/δ') / (2n))`.
//!
//! The two verdicts OOD and WD can never fire together; both functions
//! assert this.
//!
//! The [`baseline`] functions implement the MSP and MaxLogit anomaly scores
//! for comparison. They look only at the policy's logits, not at costs.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certificates::Certificate;
use crate::serde_ext::extended_f64_signed;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectorError {
    #[error("test cost {0} must lie in [0, 1]")]
    InvalidCost(f64),
    #[error("test dataset size must be positive")]
    EmptyTestSet,
    #[error("{name} = {value} must lie in (0, 1)")]
    InvalidRate { name: &'static str, value: f64 },
    #[error("{name} + {name}' = {sum} must be below 1")]
    RateSum { name: &'static str, sum: f64 },
    #[error("upper bound {upper} lies below lower bound {lower}")]
    InvertedCertificates { upper: f64, lower: f64 },
    #[error("baseline holdout needs at least {min} environments, got {0}", min = baseline::MIN_HOLDOUT)]
    HoldoutTooSmall(usize),
    #[error("calibration quantile {0} must lie in (0, 1]")]
    InvalidQuantile(f64),
    #[error("baseline detection needs at least one score")]
    NoScores,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "OOD")]
    Ood,
    #[serde(rename = "WD")]
    Wd,
    #[serde(rename = "UNKNOWN")]
    Unknown,
}

impl Verdict {
    pub const ALL: [Verdict; 3] = [Verdict::Ood, Verdict::Wd, Verdict::Unknown];

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Ood => "OOD",
            Verdict::Wd => "WD",
            Verdict::Unknown => "UNKNOWN",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The certificates supplying the upper (`δ_O`) and lower (`δ_W`) bounds.
/// They may be the same certificate.
#[derive(Debug, Clone, Copy)]
pub struct CertificatePair<'a> {
    pub upper: &'a Certificate,
    pub lower: &'a Certificate,
}

impl<'a> CertificatePair<'a> {
    pub fn single(cert: &'a Certificate) -> Self {
        Self { upper: cert, lower: cert }
    }

    pub fn new(upper: &'a Certificate, lower: &'a Certificate) -> Result<Self, DetectorError> {
        if upper.upper_bound < lower.lower_bound {
            return Err(DetectorError::InvertedCertificates {
                upper: upper.upper_bound,
                lower: lower.lower_bound,
            });
        }
        Ok(Self { upper, lower })
    }

    fn upper_bound(&self) -> f64 {
        self.upper.upper_bound
    }

    fn lower_bound(&self) -> f64 {
        self.lower.lower_bound
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method")]
pub enum Indicators {
    #[serde(rename = "hypothesis")]
    Hypothesis { tau_bar: f64, tau_underbar: f64, p_bound_ood: f64, p_bound_wd: f64 },
    #[serde(rename = "confidence_interval")]
    ConfidenceInterval {
        #[serde(with = "extended_f64_signed")]
        delta_c_o: f64,
        #[serde(with = "extended_f64_signed")]
        delta_c_w: f64,
        gamma_o: f64,
        gamma_w: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionVerdict {
    pub verdict: Verdict,
    pub indicators: Indicators,
    pub test_cost: f64,
    pub n: usize,
}

impl fmt::Display for DetectionVerdict {
    /// `OOD|WD|UNKNOWN p_ood=… p_wd=… dCo=… dCw=…`; fields the method does
    /// not compute print as `na`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let num = |x: f64| format!("{x:.6}");
        let na = || "na".to_string();
        let (p_ood, p_wd, dco, dcw) = match self.indicators {
            Indicators::Hypothesis { p_bound_ood, p_bound_wd, .. } => (num(p_bound_ood), num(p_bound_wd), na(), na()),
            Indicators::ConfidenceInterval { delta_c_o, delta_c_w, .. } => {
                (na(), na(), num(delta_c_o), num(delta_c_w))
            }
        };
        write!(f, "{} p_ood={p_ood} p_wd={p_wd} dCo={dco} dCw={dcw}", self.verdict)
    }
}

/// JSON form of a verdict with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    #[serde(flatten)]
    pub verdict: DetectionVerdict,
    pub certificate_upper: String,
    pub certificate_lower: String,
    /// `(α_O, α_W)` or `(δ'_O, δ'_W)`, depending on the method.
    pub rates: [f64; 2],
}

impl VerdictRecord {
    pub fn new(verdict: DetectionVerdict, certs: CertificatePair<'_>, rates: [f64; 2]) -> Self {
        Self {
            verdict,
            certificate_upper: certs.upper.id(),
            certificate_lower: certs.lower.id(),
            rates,
        }
    }
}

fn check_test(test_cost: f64, n: usize) -> Result<(), DetectorError> {
    if !(0.0..=1.0).contains(&test_cost) {
        return Err(DetectorError::InvalidCost(test_cost));
    }
    if n == 0 {
        return Err(DetectorError::EmptyTestSet);
    }
    Ok(())
}

fn check_rate(name: &'static str, value: f64) -> Result<(), DetectorError> {
    if !(value > 0.0 && value < 1.0) {
        return Err(DetectorError::InvalidRate { name, value });
    }
    Ok(())
}

/// Hypothesis-testing detector with significance levels `α_O`, `α_W`.
pub fn detect_hypothesis(
    test_cost: f64,
    n: usize,
    certs: CertificatePair<'_>,
    alpha_o: f64,
    alpha_w: f64,
) -> Result<DetectionVerdict, DetectorError> {
    check_test(test_cost, n)?;
    check_rate("alpha_o", alpha_o)?;
    check_rate("alpha_w", alpha_w)?;
    let nf = n as f64;
    let tau_bar = (test_cost - certs.upper_bound()).max(0.0);
    let tau_underbar = (certs.lower_bound() - test_cost).max(0.0);
    let p_bound_ood = (-2.0 * nf * tau_bar * tau_bar).exp();
    let p_bound_wd = (-2.0 * nf * tau_underbar * tau_underbar).exp();
    let ood = p_bound_ood <= alpha_o;
    let wd = p_bound_wd <= alpha_w;
    assert!(!(ood && wd), "hypothesis detector declared both OOD and WD");
    let verdict = if ood {
        Verdict::Ood
    } else if wd {
        Verdict::Wd
    } else {
        Verdict::Unknown
    };
    Ok(DetectionVerdict {
        verdict,
        indicators: Indicators::Hypothesis { tau_bar, tau_underbar, p_bound_ood, p_bound_wd },
        test_cost,
        n,
    })
}

/// `sqrt(ln(1/δ') / (2n))`.
pub fn hoeffding_slack(delta_prime: f64, n: usize) -> f64 {
    ((1.0 / delta_prime).ln() / (2.0 * n as f64)).sqrt()
}

/// Confidence-interval detector. `δ_O`, `δ_W` are the confidence levels the
/// certificates were built with and only enter through the validity check
/// `δ + δ' < 1`.
pub fn detect_confidence_interval(
    test_cost: f64,
    n: usize,
    certs: CertificatePair<'_>,
    delta_o: f64,
    delta_o_prime: f64,
    delta_w: f64,
    delta_w_prime: f64,
) -> Result<DetectionVerdict, DetectorError> {
    check_test(test_cost, n)?;
    check_rate("delta_o", delta_o)?;
    check_rate("delta_o_prime", delta_o_prime)?;
    check_rate("delta_w", delta_w)?;
    check_rate("delta_w_prime", delta_w_prime)?;
    if delta_o + delta_o_prime >= 1.0 {
        return Err(DetectorError::RateSum { name: "delta_o", sum: delta_o + delta_o_prime });
    }
    if delta_w + delta_w_prime >= 1.0 {
        return Err(DetectorError::RateSum { name: "delta_w", sum: delta_w + delta_w_prime });
    }
    let gamma_o = hoeffding_slack(delta_o_prime, n);
    let gamma_w = hoeffding_slack(delta_w_prime, n);
    let delta_c_o = test_cost - gamma_o - certs.upper_bound();
    let delta_c_w = certs.lower_bound() - test_cost - gamma_w;
    let ood = delta_c_o > 0.0;
    let wd = delta_c_w >= 0.0;
    assert!(!(ood && wd), "confidence-interval detector declared both OOD and WD");
    let verdict = if ood {
        Verdict::Ood
    } else if wd {
        Verdict::Wd
    } else {
        Verdict::Unknown
    };
    Ok(DetectionVerdict {
        verdict,
        indicators: Indicators::ConfidenceInterval { delta_c_o, delta_c_w, gamma_o, gamma_w },
        test_cost,
        n,
    })
}

pub mod baseline {
    //! Softmax-confidence baselines. Scores are oriented so that larger
    //! means more anomalous; a dataset is flagged when its mean score is
    //! strictly above a threshold calibrated on training-distribution
    //! environments.

    use std::fmt;

    use serde::{Deserialize, Serialize};

    use super::DetectorError;
    use crate::benchmarks::{rollout, BenchmarkSpec, EnvDistributionParams, Environment};
    use crate::seeds;

    pub const MIN_HOLDOUT: usize = 100;

    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
    pub enum ScoreKind {
        #[serde(rename = "MSP")]
        Msp,
        MaxLogit,
    }

    impl ScoreKind {
        pub const ALL: [ScoreKind; 2] = [ScoreKind::Msp, ScoreKind::MaxLogit];

        pub fn as_str(self) -> &'static str {
            match self {
                ScoreKind::Msp => "MSP",
                ScoreKind::MaxLogit => "MaxLogit",
            }
        }
    }

    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
    pub enum BaselineVerdict {
        #[serde(rename = "OOD")]
        Ood,
        #[serde(rename = "NOT_OOD")]
        NotOod,
    }

    impl BaselineVerdict {
        pub fn as_str(self) -> &'static str {
            match self {
                BaselineVerdict::Ood => "OOD",
                BaselineVerdict::NotOod => "NOT_OOD",
            }
        }
    }

    impl fmt::Display for BaselineVerdict {
        fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            f.write_str(self.as_str())
        }
    }

    #[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
    pub struct BaselineCalibration {
        pub score_kind: ScoreKind,
        pub threshold: f64,
        pub calibration_quantile: f64,
    }

    /// Anomaly score of one logit vector.
    pub fn score(kind: ScoreKind, logits: &[f64]) -> f64 {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        match kind {
            ScoreKind::Msp => {
                let partition: f64 = logits.iter().map(|l| (l - max).exp()).sum();
                1.0 - 1.0 / partition
            }
            ScoreKind::MaxLogit => -max,
        }
    }

    /// Anomaly score of the policy `weights` in one environment.
    pub fn environment_score(kind: ScoreKind, spec: &BenchmarkSpec, env: &Environment, weights: &[f64]) -> f64 {
        score(kind, &rollout(spec, env, weights).score_vector)
    }

    /// Order statistic `ceil(q N) - 1` of the scores; `q = 1` gives the
    /// maximum.
    pub fn empirical_quantile(scores: &[f64], quantile: f64) -> f64 {
        let mut sorted = scores.to_vec();
        sorted.sort_by(f64::total_cmp);
        let idx = ((quantile * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
        sorted[idx]
    }

    /// Calibrates the threshold on `holdout_size` fresh environments from the
    /// training distribution.
    pub fn calibrate(
        kind: ScoreKind,
        spec: &BenchmarkSpec,
        training_params: &EnvDistributionParams,
        weights: &[f64],
        holdout_size: usize,
        quantile: f64,
        seed: u64,
    ) -> Result<BaselineCalibration, DetectorError> {
        if holdout_size < MIN_HOLDOUT {
            return Err(DetectorError::HoldoutTooSmall(holdout_size));
        }
        if !(quantile > 0.0 && quantile <= 1.0) {
            return Err(DetectorError::InvalidQuantile(quantile));
        }
        let scores: Vec<f64> = (0..holdout_size as u64)
            .map(|i| {
                let env = spec.sample_environment(training_params, seeds::derive(seed, &[i]));
                environment_score(kind, spec, &env, weights)
            })
            .collect();
        Ok(BaselineCalibration {
            score_kind: kind,
            threshold: empirical_quantile(&scores, quantile),
            calibration_quantile: quantile,
        })
    }

    /// OOD iff the mean test score is strictly above the threshold.
    pub fn detect(calibration: &BaselineCalibration, test_scores: &[f64]) -> Result<BaselineVerdict, DetectorError> {
        if test_scores.is_empty() {
            return Err(DetectorError::NoScores);
        }
        let mean = test_scores.iter().sum::<f64>() / test_scores.len() as f64;
        Ok(if mean > calibration.threshold { BaselineVerdict::Ood } else { BaselineVerdict::NotOod })
    }
}
