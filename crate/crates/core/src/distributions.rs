//! Diagonal-Gaussian distributions over policy weights.
//!
//! A distribution is parameterised by ψ = (μ, log s): a mean vector and the
//! logarithm of the per-dimension variances. Gradients with respect to ψ are
//! carried in [`GaussianGradient`], with the log-variance block taken with
//! respect to `log s` so that variances stay positive under unconstrained
//! updates.
//!
//! The Rényi divergence of order 2 between two such Gaussians has a closed
//! form when `2 s0 - s > 0` in every dimension:
//!
//! ```text
//! D2(P || P0) = Σ_i (μ_i - μ0_i)² / (2 s0_i - s_i)
//!             - ½ ln( (2 s0_i - s_i) s_i / s0_i² )
//! ```
//!
//! and is infinite otherwise. This equals `ln E_{w~P0}[(P(w)/P0(w))²]`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeds;

/// Default margin used when projecting variances back into the feasible set.
pub const DEFAULT_PROJECTION_MARGIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("distribution must have at least one dimension")]
    Empty,
    #[error("mean has length {mean} but log_variance has length {log_variance}")]
    LengthMismatch { mean: usize, log_variance: usize },
    #[error("mean[{0}] is not finite")]
    NonFiniteMean(usize),
    #[error("log_variance[{0}] is not finite")]
    NonFiniteLogVariance(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("projection margin {0} must lie in (0, 1)")]
    InvalidMargin(f64),
}

/// N(μ, diag(s)) stored as (μ, log s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGaussian", into = "RawGaussian")]
pub struct DiagonalGaussian {
    mean: Vec<f64>,
    log_variance: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGaussian {
    mean: Vec<f64>,
    log_variance: Vec<f64>,
}

impl TryFrom<RawGaussian> for DiagonalGaussian {
    type Error = DistributionError;

    fn try_from(raw: RawGaussian) -> Result<Self, Self::Error> {
        DiagonalGaussian::new(raw.mean, raw.log_variance)
    }
}

impl From<DiagonalGaussian> for RawGaussian {
    fn from(g: DiagonalGaussian) -> Self {
        RawGaussian { mean: g.mean, log_variance: g.log_variance }
    }
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, log_variance: Vec<f64>) -> Result<Self, DistributionError> {
        if mean.is_empty() {
            return Err(DistributionError::Empty);
        }
        if mean.len() != log_variance.len() {
            return Err(DistributionError::LengthMismatch {
                mean: mean.len(),
                log_variance: log_variance.len(),
            });
        }
        if let Some(i) = mean.iter().position(|m| !m.is_finite()) {
            return Err(DistributionError::NonFiniteMean(i));
        }
        if let Some(i) = log_variance.iter().position(|l| !l.is_finite()) {
            return Err(DistributionError::NonFiniteLogVariance(i));
        }
        Ok(Self { mean, log_variance })
    }

    /// Same variance in every dimension.
    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Result<Self, DistributionError> {
        let d = mean.len();
        Self::new(mean, vec![variance.ln(); d])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_variance(&self) -> &[f64] {
        &self.log_variance
    }

    pub fn variances(&self) -> impl Iterator<Item = f64> + '_ {
        self.log_variance.iter().map(|l| l.exp())
    }

    fn check_dim(&self, got: usize) -> Result<(), DistributionError> {
        if got != self.dim() {
            return Err(DistributionError::DimensionMismatch { expected: self.dim(), got });
        }
        Ok(())
    }

    /// Maps standard-normal noise `z` to `μ + sqrt(s) ⊙ z`.
    pub fn reparameterize(&self, noise: &[f64]) -> Result<Vec<f64>, DistributionError> {
        self.check_dim(noise.len())?;
        Ok(self
            .mean
            .iter()
            .zip(&self.log_variance)
            .zip(noise)
            .map(|((m, l), z)| m + (0.5 * l).exp() * z)
            .collect())
    }

    /// Draws a standard-normal vector of this distribution's dimension.
    pub fn standard_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect()
    }

    /// Draws one weight vector using the caller's random source.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = self.standard_noise(rng);
        self.reparameterize(&z).expect("noise has matching dimension")
    }

    /// Draws one weight vector from a dedicated stream for `seed`.
    pub fn sample_seeded(&self, seed: u64) -> WeightSample {
        let mut rng = seeds::rng(seed);
        WeightSample { weights: self.sample(&mut rng), seed_tag: seed }
    }

    /// `ln N(w; μ, diag(s))`.
    pub fn log_density(&self, w: &[f64]) -> Result<f64, DistributionError> {
        self.check_dim(w.len())?;
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        Ok(self
            .mean
            .iter()
            .zip(&self.log_variance)
            .zip(w)
            .map(|((m, l), x)| {
                let r = x - m;
                -0.5 * (ln_2pi + l) - 0.5 * r * r * (-l).exp()
            })
            .sum())
    }

    /// `∇_ψ ln N_ψ(w)`: `(w - μ)/s` for the mean and `½((w - μ)²/s - 1)` for
    /// `log s`.
    pub fn score(&self, w: &[f64]) -> Result<GaussianGradient, DistributionError> {
        self.check_dim(w.len())?;
        let mut g = GaussianGradient::zeros(self.dim());
        for i in 0..self.dim() {
            let inv_s = (-self.log_variance[i]).exp();
            let r = w[i] - self.mean[i];
            g.mean[i] = r * inv_s;
            g.log_variance[i] = 0.5 * (r * r * inv_s - 1.0);
        }
        Ok(g)
    }

    /// Gradient-descent step `ψ - lr · grad`. Non-finite results are
    /// returned as an error so the caller can report where training diverged.
    pub fn step(&self, grad: &GaussianGradient, lr: f64) -> Result<Self, DistributionError> {
        self.check_dim(grad.dim())?;
        let mean = self.mean.iter().zip(&grad.mean).map(|(m, g)| m - lr * g).collect();
        let log_variance = self
            .log_variance
            .iter()
            .zip(&grad.log_variance)
            .map(|(l, g)| l - lr * g)
            .collect();
        Self::new(mean, log_variance)
    }
}

/// A single weight vector drawn from a posterior, tagged with the seed that
/// reproduces it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSample {
    pub weights: Vec<f64>,
    pub seed_tag: u64,
}

/// A gradient over ψ = (μ, log s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianGradient {
    pub mean: Vec<f64>,
    pub log_variance: Vec<f64>,
}

impl GaussianGradient {
    pub fn zeros(d: usize) -> Self {
        Self { mean: vec![0.0; d], log_variance: vec![0.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &GaussianGradient, scale: f64) {
        for (a, b) in self.mean.iter_mut().zip(&other.mean) {
            *a += scale * b;
        }
        for (a, b) in self.log_variance.iter_mut().zip(&other.log_variance) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.mean.iter_mut().chain(self.log_variance.iter_mut()).for_each(|x| *x *= factor);
    }

    /// Concatenation `[mean..., log_variance...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.mean.iter().chain(&self.log_variance).copied().collect()
    }

    pub fn norm(&self) -> f64 {
        self.mean.iter().chain(&self.log_variance).map(|x| x * x).sum::<f64>().sqrt()
    }
}

fn check_pair(p: &DiagonalGaussian, p0: &DiagonalGaussian) -> Result<(), DistributionError> {
    if p.dim() != p0.dim() {
        return Err(DistributionError::DimensionMismatch { expected: p0.dim(), got: p.dim() });
    }
    Ok(())
}

/// True when `s_i < 2 s0_i` in every dimension, i.e. D2(p || p0) is finite.
pub fn is_feasible(p: &DiagonalGaussian, p0: &DiagonalGaussian) -> bool {
    p.dim() == p0.dim()
        && p.log_variance
            .iter()
            .zip(&p0.log_variance)
            .all(|(l, l0)| 2.0 * l0.exp() - l.exp() > 0.0)
}

/// Rényi divergence of order 2, `+inf` when the pair is infeasible.
pub fn renyi2_divergence(
    p: &DiagonalGaussian,
    p0: &DiagonalGaussian,
) -> Result<f64, DistributionError> {
    check_pair(p, p0)?;
    let mut total = 0.0;
    for i in 0..p.dim() {
        let (l, l0) = (p.log_variance[i], p0.log_variance[i]);
        let s2 = 2.0 * l0.exp() - l.exp();
        if s2 <= 0.0 {
            return Ok(f64::INFINITY);
        }
        let diff = p.mean[i] - p0.mean[i];
        total += diff * diff / s2 - 0.5 * (s2.ln() + l - 2.0 * l0);
    }
    // The log-determinant term is non-negative analytically; rounding can
    // leave a tiny negative residue when p == p0.
    Ok(total.max(0.0))
}

/// Closed-form `∇_ψ D2(P_ψ || P0)` for a feasible pair, `None` otherwise.
pub fn renyi2_gradient(
    p: &DiagonalGaussian,
    p0: &DiagonalGaussian,
) -> Result<Option<GaussianGradient>, DistributionError> {
    check_pair(p, p0)?;
    let mut g = GaussianGradient::zeros(p.dim());
    for i in 0..p.dim() {
        let s = p.log_variance[i].exp();
        let s2 = 2.0 * p0.log_variance[i].exp() - s;
        if s2 <= 0.0 {
            return Ok(None);
        }
        let diff = p.mean[i] - p0.mean[i];
        g.mean[i] = 2.0 * diff / s2;
        g.log_variance[i] = s * diff * diff / (s2 * s2) + 0.5 * s / s2 - 0.5;
    }
    Ok(Some(g))
}

/// Clamps each variance to at most `(2 - margin) · s0_i`; the mean is
/// untouched. The result is always feasible.
pub fn project_variances(
    p: &DiagonalGaussian,
    p0: &DiagonalGaussian,
    margin: f64,
) -> Result<DiagonalGaussian, DistributionError> {
    if !(margin > 0.0 && margin < 1.0) {
        return Err(DistributionError::InvalidMargin(margin));
    }
    check_pair(p, p0)?;
    let ln_cap = (2.0 - margin).ln();
    let log_variance = p
        .log_variance
        .iter()
        .zip(&p0.log_variance)
        .map(|(&l, &l0)| l.min(l0 + ln_cap))
        .collect();
    DiagonalGaussian::new(p.mean.clone(), log_variance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(mean: &[f64], var: &[f64]) -> DiagonalGaussian {
        DiagonalGaussian::new(mean.to_vec(), var.iter().map(|v| v.ln()).collect()).unwrap()
    }

    #[test]
    fn construction_rejects_bad_shapes() {
        assert_eq!(DiagonalGaussian::new(vec![], vec![]), Err(DistributionError::Empty));
        assert!(matches!(
            DiagonalGaussian::new(vec![0.0], vec![0.0, 0.0]),
            Err(DistributionError::LengthMismatch { .. })
        ));
        assert_eq!(
            DiagonalGaussian::new(vec![0.0, 0.0], vec![0.0, f64::NEG_INFINITY]),
            Err(DistributionError::NonFiniteLogVariance(1))
        );
    }

    #[test]
    fn zero_noise_recovers_mean() {
        let d = g(&[0.0, 0.0], &[1.0, 1.0]);
        assert_eq!(d.reparameterize(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn reparameterize_arithmetic() {
        let d = g(&[5.0], &[4.0]);
        assert_eq!(d.reparameterize(&[1.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn seeded_sampling_is_deterministic() {
        let d = g(&[0.3, -1.0, 2.0], &[0.5, 1.0, 2.0]);
        let a = d.sample_seeded(99);
        let b = d.sample_seeded(99);
        assert_eq!(a, b);
        assert_eq!(a.seed_tag, 99);
        assert_ne!(a.weights, d.sample_seeded(100).weights);
    }

    #[test]
    fn log_density_standard_normal_at_zero() {
        let d = g(&[0.0], &[1.0]);
        // -½ ln(2π)
        assert!((d.log_density(&[0.0]).unwrap() - (-0.918_938_533_204_672_7)).abs() < 1e-12);
    }

    #[test]
    fn log_density_mode_is_the_mean() {
        let d = g(&[0.0], &[1.0]);
        let at_mean = d.log_density(&[0.0]).unwrap();
        for i in -50..=50 {
            let w = i as f64 * 0.1;
            if i != 0 {
                assert!(d.log_density(&[w]).unwrap() < at_mean);
            }
        }
    }

    #[test]
    fn log_density_factorizes() {
        let d2 = g(&[0.5, -1.0], &[2.0, 0.3]);
        let a = g(&[0.5], &[2.0]).log_density(&[1.1]).unwrap();
        let b = g(&[-1.0], &[0.3]).log_density(&[-0.2]).unwrap();
        assert!((d2.log_density(&[1.1, -0.2]).unwrap() - (a + b)).abs() < 1e-12);
        assert!(matches!(
            d2.log_density(&[1.0]),
            Err(DistributionError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn score_matches_finite_differences() {
        let d = g(&[0.2, -0.7], &[0.8, 1.7]);
        let w = [0.9, -1.4];
        let score = d.score(&w).unwrap().to_flat();
        let h = 1e-6;
        for j in 0..4 {
            let mut mean = d.mean().to_vec();
            let mut lv = d.log_variance().to_vec();
            let bump = |mean: &mut Vec<f64>, lv: &mut Vec<f64>, delta: f64| {
                if j < 2 {
                    mean[j] += delta
                } else {
                    lv[j - 2] += delta
                }
            };
            bump(&mut mean, &mut lv, h);
            let up = DiagonalGaussian::new(mean.clone(), lv.clone()).unwrap().log_density(&w).unwrap();
            bump(&mut mean, &mut lv, -2.0 * h);
            let down = DiagonalGaussian::new(mean, lv).unwrap().log_density(&w).unwrap();
            assert!(((up - down) / (2.0 * h) - score[j]).abs() < 1e-7);
        }
    }

    #[test]
    fn renyi_identical_is_zero() {
        let p = g(&[0.1, 2.0, -3.0], &[0.5, 1.0, 3.0]);
        assert!(renyi2_divergence(&p, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn renyi_mean_shift_unit_variance() {
        let p = g(&[1.0, 0.0], &[1.0, 1.0]);
        let p0 = g(&[0.0, 0.0], &[1.0, 1.0]);
        assert!((renyi2_divergence(&p, &p0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn renyi_infeasible_is_infinite() {
        let p = g(&[0.0], &[2.5]);
        let p0 = g(&[0.0], &[1.0]);
        assert_eq!(renyi2_divergence(&p, &p0).unwrap(), f64::INFINITY);
        assert!(renyi2_gradient(&p, &p0).unwrap().is_none());
        assert!(!is_feasible(&p, &p0));
    }

    #[test]
    fn renyi_gradient_matches_finite_differences() {
        let p = g(&[0.4, -0.3, 1.2], &[0.7, 1.5, 0.2]);
        let p0 = g(&[0.0, 0.1, 0.9], &[1.0, 1.0, 0.3]);
        let grad = renyi2_gradient(&p, &p0).unwrap().unwrap().to_flat();
        let h = 1e-6;
        let d = p.dim();
        for j in 0..2 * d {
            let shifted = |delta: f64| {
                let mut mean = p.mean().to_vec();
                let mut lv = p.log_variance().to_vec();
                if j < d {
                    mean[j] += delta
                } else {
                    lv[j - d] += delta
                }
                let q = DiagonalGaussian::new(mean, lv).unwrap();
                renyi2_divergence(&q, &p0).unwrap()
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            assert!((fd - grad[j]).abs() < 1e-6, "component {j}: fd {fd} vs {}", grad[j]);
        }
    }

    #[test]
    fn projection_examples() {
        let p0 = g(&[0.0], &[1.0]);
        let p = g(&[3.0], &[3.0]);
        let q = project_variances(&p, &p0, 0.1).unwrap();
        assert!((q.variances().next().unwrap() - 1.9).abs() < 1e-12);
        assert_eq!(q.mean(), &[3.0]);

        let feasible = g(&[1.0, 2.0], &[0.5, 1.5]);
        let p0 = g(&[0.0, 0.0], &[1.0, 1.0]);
        assert_eq!(project_variances(&feasible, &p0, 0.01).unwrap(), feasible);

        assert_eq!(
            project_variances(&feasible, &p0, 1.0),
            Err(DistributionError::InvalidMargin(1.0))
        );
        assert_eq!(
            project_variances(&feasible, &p0, 0.0),
            Err(DistributionError::InvalidMargin(0.0))
        );
    }

    #[test]
    fn json_shape() {
        let p = g(&[1.0, 2.0], &[1.0, 1.0]);
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, r#"{"mean":[1.0,2.0],"log_variance":[0.0,0.0]}"#);
        let back: DiagonalGaussian = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<DiagonalGaussian>(r#"{"mean":[],"log_variance":[]}"#).is_err());
        assert!(serde_json::from_str::<DiagonalGaussian>(
            r#"{"mean":[0.0],"log_variance":[0.0],"extra":1}"#
        )
        .is_err());
    }

    fn pair_strategy() -> impl Strategy<Value = (DiagonalGaussian, DiagonalGaussian)> {
        (1usize..=5).prop_flat_map(|d| {
            (
                prop::collection::vec(-2.0f64..2.0, d),
                prop::collection::vec(-2.0f64..2.0, d),
                prop::collection::vec(-1.5f64..1.5, d),
                prop::collection::vec(0.05f64..1.95, d),
            )
                .prop_map(|(m, m0, l0, ratio)| {
                    let lv: Vec<f64> = l0.iter().zip(&ratio).map(|(l, r)| l + r.ln()).collect();
                    (
                        DiagonalGaussian::new(m, lv).unwrap(),
                        DiagonalGaussian::new(m0, l0).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn renyi_is_nonnegative((p, p0) in pair_strategy()) {
            let d2 = renyi2_divergence(&p, &p0).unwrap();
            prop_assert!(d2.is_finite());
            prop_assert!(d2 >= 0.0);
        }

        #[test]
        fn renyi_equal_covariance_is_mahalanobis((p, p0) in pair_strategy()) {
            let q = DiagonalGaussian::new(p.mean().to_vec(), p0.log_variance().to_vec()).unwrap();
            let expected: f64 = q.mean().iter().zip(p0.mean()).zip(p0.variances())
                .map(|((m, m0), s)| (m - m0).powi(2) / s).sum();
            let d2 = renyi2_divergence(&q, &p0).unwrap();
            prop_assert!((d2 - expected).abs() <= 1e-9 * (1.0 + expected));
        }

        #[test]
        fn renyi_zero_only_at_equality((p, p0) in pair_strategy()) {
            let d2 = renyi2_divergence(&p, &p0).unwrap();
            if d2 <= 1e-9 {
                let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-3);
                prop_assert!(close(p.mean(), p0.mean()) && close(p.log_variance(), p0.log_variance()));
            }
            prop_assert!(renyi2_divergence(&p0, &p0).unwrap() <= 1e-9);
        }

        #[test]
        fn projection_always_feasible(
            m in prop::collection::vec(-3.0f64..3.0, 3),
            lv in prop::collection::vec(-4.0f64..4.0, 3),
            l0 in prop::collection::vec(-2.0f64..2.0, 3),
            margin in 0.001f64..0.999,
        ) {
            let p = DiagonalGaussian::new(m, lv).unwrap();
            let p0 = DiagonalGaussian::new(vec![0.0; 3], l0).unwrap();
            let q = project_variances(&p, &p0, margin).unwrap();
            prop_assert!(is_feasible(&q, &p0));
            prop_assert!(renyi2_divergence(&q, &p0).unwrap().is_finite());
        }

        #[test]
        fn seeded_draws_are_bit_identical(seed in any::<u64>()) {
            let d = DiagonalGaussian::new(vec![0.1, -0.2], vec![0.3, -0.4]).unwrap();
            prop_assert_eq!(d.sample_seeded(seed), d.sample_seeded(seed));
        }
    }
}
