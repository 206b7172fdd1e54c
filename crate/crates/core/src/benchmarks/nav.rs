//! Primitive-based navigation through a field of cylindrical obstacles.
//!
//! The robot starts at the origin facing +x and commits to one of `K`
//! straight-line motion primitives ending at `(path_length, y_k)` with the
//! lateral offsets `y_k` evenly spaced in `[-lateral_extent, lateral_extent]`.
//! It observes a depth profile of `B` rays over its field of view and scores
//! the primitives linearly:
//!
//! ```text
//! scores = gain · (W o + b)       W: K×B, b: K, weights = rows [W_k | b_k]
//! ```
//!
//! `gain` is a per-environment sensor exposure applied to the rendered input
//! `[o, 1]`. It rescales every score by the same positive factor, so the
//! chosen primitive (and thus the cost) never depends on it, while the
//! softmax over scores does.
//!
//! The cost of an episode is `max(0, 1 - d_min / d_thresh)` where `d_min` is
//! the clearance of the chosen path from the nearest obstacle surface.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Geometry and policy shape of the navigation benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NavSpec {
    pub primitives: usize,
    pub depth_bins: usize,
    pub field_of_view_deg: f64,
    pub path_length: f64,
    pub lateral_extent: f64,
    pub obstacle_radius: f64,
    pub sensor_range: f64,
    pub d_thresh: f64,
    /// Episode length; every primitive is evaluated as a single committed
    /// maneuver.
    pub horizon: usize,
}

impl Default for NavSpec {
    fn default() -> Self {
        Self {
            primitives: 7,
            depth_bins: 24,
            field_of_view_deg: 120.0,
            path_length: 2.5,
            lateral_extent: 1.0,
            obstacle_radius: 0.1,
            sensor_range: 3.0,
            d_thresh: 0.5,
            horizon: 1,
        }
    }
}

/// Axis-aligned rectangle for obstacle centres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

/// Distribution over navigation environments.
///
/// Each environment picks one primitive uniformly at random as its
/// guaranteed corridor; obstacles are placed uniformly in `position_box`
/// and rejected when their surface comes closer than `min_gap / 2` to that
/// corridor's path. `exposure_gain` is a nuisance: it changes what the
/// sensor reports but never the cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NavParams {
    pub obstacle_count: usize,
    pub min_gap: f64,
    pub position_box: Rect,
    #[serde(default = "unit_gain")]
    pub exposure_gain: [f64; 2],
}

fn unit_gain() -> [f64; 2] {
    [1.0, 1.0]
}

impl Default for NavParams {
    fn default() -> Self {
        Self {
            obstacle_count: 9,
            min_gap: 0.4,
            position_box: Rect { x_min: 1.3, x_max: 2.0, y_min: -1.0, y_max: 1.0 },
            exposure_gain: unit_gain(),
        }
    }
}

/// Rejection attempts per obstacle before it is dropped.
const MAX_PLACEMENT_ATTEMPTS: usize = 200;

/// A sampled navigation environment together with its rendered sensor data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavEnvironment {
    pub obstacles: Vec<[f64; 2]>,
    pub corridor: usize,
    pub exposure_gain: f64,
    /// Depth per bin, normalised by the sensor range.
    pub depth: Vec<f64>,
    /// Clearance of each primitive's path, capped at the sensor range.
    pub clearance: Vec<f64>,
}

impl NavSpec {
    pub fn policy_dim(&self) -> usize {
        self.primitives * (self.depth_bins + 1)
    }

    /// Lateral end offset of primitive `k`.
    pub fn lateral_offset(&self, k: usize) -> f64 {
        if self.primitives == 1 {
            return 0.0;
        }
        self.lateral_extent * (-1.0 + 2.0 * k as f64 / (self.primitives - 1) as f64)
    }

    fn bin_angle(&self, j: usize) -> f64 {
        let fov = self.field_of_view_deg.to_radians();
        -0.5 * fov + (j as f64 + 0.5) * fov / self.depth_bins as f64
    }

    /// Distance from `c` to the segment of primitive `k`, minus the
    /// obstacle radius, floored at zero.
    pub fn surface_clearance(&self, k: usize, c: [f64; 2]) -> f64 {
        let end = [self.path_length, self.lateral_offset(k)];
        let len2 = end[0] * end[0] + end[1] * end[1];
        let t = ((c[0] * end[0] + c[1] * end[1]) / len2).clamp(0.0, 1.0);
        let dx = c[0] - t * end[0];
        let dy = c[1] - t * end[1];
        ((dx * dx + dy * dy).sqrt() - self.obstacle_radius).max(0.0)
    }

    fn ray_depth(&self, angle: f64, obstacles: &[[f64; 2]]) -> f64 {
        let u = [angle.cos(), angle.sin()];
        let r2 = self.obstacle_radius * self.obstacle_radius;
        let mut best = self.sensor_range;
        for c in obstacles {
            let proj = u[0] * c[0] + u[1] * c[1];
            let disc = proj * proj - (c[0] * c[0] + c[1] * c[1] - r2);
            if disc < 0.0 {
                continue;
            }
            let t = proj - disc.sqrt();
            if t >= 0.0 && t < best {
                best = t;
            }
        }
        best
    }

    /// Renders depth and clearance for an obstacle layout.
    pub fn render(&self, obstacles: Vec<[f64; 2]>, corridor: usize, exposure_gain: f64) -> NavEnvironment {
        let depth = (0..self.depth_bins)
            .map(|j| self.ray_depth(self.bin_angle(j), &obstacles) / self.sensor_range)
            .collect();
        let clearance = (0..self.primitives)
            .map(|k| {
                obstacles
                    .iter()
                    .map(|&c| self.surface_clearance(k, c))
                    .fold(self.sensor_range, f64::min)
            })
            .collect();
        NavEnvironment { obstacles, corridor, exposure_gain, depth, clearance }
    }

    pub fn sample<R: Rng + ?Sized>(&self, params: &NavParams, rng: &mut R) -> NavEnvironment {
        let corridor = rng.random_range(0..self.primitives);
        let b = params.position_box;
        let mut obstacles = Vec::with_capacity(params.obstacle_count);
        for _ in 0..params.obstacle_count {
            for _ in 0..MAX_PLACEMENT_ATTEMPTS {
                let c = [
                    b.x_min + (b.x_max - b.x_min) * rng.random::<f64>(),
                    b.y_min + (b.y_max - b.y_min) * rng.random::<f64>(),
                ];
                if self.surface_clearance(corridor, c) >= 0.5 * params.min_gap {
                    obstacles.push(c);
                    break;
                }
            }
        }
        let [g_lo, g_hi] = params.exposure_gain;
        let gain = g_lo + (g_hi - g_lo) * rng.random::<f64>();
        self.render(obstacles, corridor, gain)
    }

    /// Unscaled primitive scores `W o + b`.
    pub fn raw_scores(&self, env: &NavEnvironment, weights: &[f64]) -> Vec<f64> {
        let stride = self.depth_bins + 1;
        weights
            .chunks_exact(stride)
            .map(|row| {
                let (w, bias) = row.split_at(self.depth_bins);
                w.iter().zip(&env.depth).map(|(a, o)| a * o).sum::<f64>() + bias[0]
            })
            .collect()
    }

    pub fn cost_for_clearance(&self, clearance: f64) -> f64 {
        (1.0 - clearance / self.d_thresh).max(0.0)
    }
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
