//! Derandomized PAC-Bayes certificates.
//!
//! For a posterior `P` trained deterministically from a prior `P0` on `m`
//! environments and a single policy `π ~ P`, with probability at least
//! `1 - δ` over the training set and the draw of `π`:
//!
//! ```text
//! C_D(π) <= C_S(π) + sqrt(R)     and     C_D(π) >= C_S(π) - sqrt(R)
//! R = (D2(P || P0) + ln(2 sqrt(m) / (δ/2)^3)) / (2m)
//! ```
//!
//! Bounds are stored unclamped: the detectors do arithmetic on them and a
//! negative lower bound is meaningful there.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::distributions::DiagonalGaussian;
use crate::serde_ext::{extended_f64, extended_f64_signed};

/// Smallest training-set size for which the bound holds.
pub const MIN_TRAINING_SIZE: usize = 8;

/// Schema tag written into certificate files.
pub const CERT_SCHEMA: &str = "cert_v1";

#[derive(Debug, Error)]
pub enum CertificateError {
    #[error("training set size m = {0} is below the minimum of {MIN_TRAINING_SIZE}")]
    TooFewSamples(usize),
    #[error("delta = {0} must lie in (0, 1)")]
    InvalidDelta(f64),
    #[error("empirical cost {0} must lie in [0, 1]")]
    InvalidCost(f64),
    #[error("divergence {0} must be non-negative")]
    InvalidDivergence(f64),
    #[error("unsupported certificate schema {0:?}, expected {CERT_SCHEMA:?}")]
    Schema(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

/// `(D2 + ln(2 sqrt(m) / (δ/2)^3)) / (2m)`; infinite when `d2` is.
pub fn regularizer(d2: f64, m: usize, delta: f64) -> Result<f64, CertificateError> {
    if m < MIN_TRAINING_SIZE {
        return Err(CertificateError::TooFewSamples(m));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(CertificateError::InvalidDelta(delta));
    }
    if d2.is_nan() || d2 < 0.0 {
        return Err(CertificateError::InvalidDivergence(d2));
    }
    let mf = m as f64;
    let confidence = (2.0 * mf.sqrt()).ln() - 3.0 * (delta / 2.0).ln();
    Ok((d2 + confidence) / (2.0 * mf))
}

/// Upper and lower bounds on the expected cost of one fixed policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Certificate {
    /// C_S(π), the mean training cost of the fixed policy.
    pub empirical_cost: f64,
    #[serde(with = "extended_f64")]
    pub regularizer: f64,
    #[serde(with = "extended_f64")]
    pub upper_bound: f64,
    #[serde(with = "extended_f64_signed")]
    pub lower_bound: f64,
    pub delta: f64,
    pub m: usize,
    #[serde(with = "extended_f64")]
    pub d2: f64,
    pub policy_seed: u64,
}

/// Certifies a policy with training cost `empirical_cost`.
pub fn build_certificate(
    empirical_cost: f64,
    d2: f64,
    m: usize,
    delta: f64,
    policy_seed: u64,
) -> Result<Certificate, CertificateError> {
    if !(0.0..=1.0).contains(&empirical_cost) {
        return Err(CertificateError::InvalidCost(empirical_cost));
    }
    let r = regularizer(d2, m, delta)?;
    Ok(Certificate::from_regularizer(empirical_cost, r, d2, m, delta, policy_seed))
}

impl Certificate {
    /// Assembles a certificate from an already computed regularizer.
    pub fn from_regularizer(
        empirical_cost: f64,
        regularizer: f64,
        d2: f64,
        m: usize,
        delta: f64,
        policy_seed: u64,
    ) -> Self {
        let half_width = regularizer.sqrt();
        Self {
            empirical_cost,
            regularizer,
            upper_bound: empirical_cost + half_width,
            lower_bound: empirical_cost - half_width,
            delta,
            m,
            d2,
            policy_seed,
        }
    }

    /// `sqrt(R)`.
    pub fn half_width(&self) -> f64 {
        self.regularizer.sqrt()
    }

    pub fn is_vacuous(&self) -> bool {
        !self.regularizer.is_finite()
    }

    /// Short stable identifier derived from the certificate contents.
    pub fn id(&self) -> String {
        let json = serde_json::to_vec(self).expect("certificate serializes");
        let digest = Sha256::digest(&json);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// On-disk certificate: all certificate fields, the prior and posterior that
/// produced it, and a schema tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateFile {
    pub schema: String,
    #[serde(flatten)]
    pub certificate: Certificate,
    pub prior: DiagonalGaussian,
    pub posterior: DiagonalGaussian,
}

impl CertificateFile {
    pub fn new(certificate: Certificate, prior: DiagonalGaussian, posterior: DiagonalGaussian) -> Self {
        Self { schema: CERT_SCHEMA.to_string(), certificate, prior, posterior }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate file serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn save(&self, path: &Path) -> Result<(), CertificateError> {
        fs::write(path, self.to_json()).map_err(|source| CertificateError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CertificateError> {
        let text = fs::read_to_string(path).map_err(|source| CertificateError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file = Self::from_json(&text).map_err(|source| CertificateError::Json {
            path: path.display().to_string(),
            source,
        })?;
        if file.schema != CERT_SCHEMA {
            return Err(CertificateError::Schema(file.schema));
        }
        Ok(file)
    }
}
