//! A smooth, differentiable benchmark: the environment is a target point
//! `e` and the cost of weights `w` is `clamp(‖w - e‖² / β, 0, 1)`.
//!
//! Each environment also carries a noisy observation of its target. The
//! cost never reads it; it only feeds the classifier-style scores used by
//! the baselines, which makes observation noise a cost-irrelevant nuisance.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadraticSpec {
    pub dim: usize,
    pub beta: f64,
}

impl Default for QuadraticSpec {
    fn default() -> Self {
        Self { dim: 4, beta: 4.0 }
    }
}

/// Targets are drawn as `center + spread · z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticParams {
    pub center: Vec<f64>,
    pub spread: f64,
    #[serde(default)]
    pub observation_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticEnvironment {
    pub target: Vec<f64>,
    pub observation: Vec<f64>,
}

impl QuadraticSpec {
    pub fn sample<R: Rng + ?Sized>(&self, params: &QuadraticParams, rng: &mut R) -> QuadraticEnvironment {
        let target: Vec<f64> = params
            .center
            .iter()
            .map(|c| c + params.spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let observation = target
            .iter()
            .map(|t| t + params.observation_noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        QuadraticEnvironment { target, observation }
    }

    pub fn squared_distance(&self, env: &QuadraticEnvironment, w: &[f64]) -> f64 {
        w.iter().zip(&env.target).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    pub fn cost(&self, env: &QuadraticEnvironment, w: &[f64]) -> f64 {
        (self.squared_distance(env, w) / self.beta).clamp(0.0, 1.0)
    }

    /// `∂cost/∂w`: `2(w - e)/β` inside the unclamped region, zero once the
    /// cost saturates (including on the boundary).
    pub fn cost_gradient(&self, env: &QuadraticEnvironment, w: &[f64]) -> Vec<f64> {
        if self.squared_distance(env, w) >= self.beta {
            return vec![0.0; w.len()];
        }
        w.iter().zip(&env.target).map(|(a, b)| 2.0 * (a - b) / self.beta).collect()
    }

    /// Per-coordinate logits `-(w_j - o_j)²` against the observation.
    pub fn scores(&self, env: &QuadraticEnvironment, w: &[f64]) -> Vec<f64> {
        w.iter().zip(&env.observation).map(|(a, o)| -(a - o) * (a - o)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(target: &[f64]) -> QuadraticEnvironment {
        QuadraticEnvironment { target: target.to_vec(), observation: target.to_vec() }
    }

    #[test]
    fn perfect_match_costs_nothing() {
        let spec = QuadraticSpec::default();
        assert_eq!(spec.cost(&env(&[1.0, 2.0, 3.0, 4.0]), &[1.0, 2.0, 3.0, 4.0]), 0.0);
    }

    #[test]
    fn far_weights_saturate() {
        let spec = QuadraticSpec::default();
        let e = env(&[0.0; 4]);
        assert_eq!(spec.cost(&e, &[2.0, 0.0, 0.0, 0.0]), 1.0);
        assert_eq!(spec.cost(&e, &[5.0, 5.0, 0.0, 0.0]), 1.0);
        assert_eq!(spec.cost_gradient(&e, &[5.0, 5.0, 0.0, 0.0]), vec![0.0; 4]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let spec = QuadraticSpec::default();
        let e = env(&[0.3, -0.2, 0.1, 0.5]);
        let w = [0.9, 0.4, -0.3, 0.2];
        let g = spec.cost_gradient(&e, &w);
        let h = 1e-6;
        for j in 0..4 {
            let mut up = w;
            let mut down = w;
            up[j] += h;
            down[j] -= h;
            let fd = (spec.cost(&e, &up) - spec.cost(&e, &down)) / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-4 * g[j].abs().max(1e-8), "{fd} vs {}", g[j]);
        }
    }
}
