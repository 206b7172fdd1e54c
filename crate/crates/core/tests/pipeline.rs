use boundwatch::benchmarks::nav::{NavParams, NavSpec, Rect};
use boundwatch::benchmarks::quadratic::{QuadraticParams, QuadraticSpec};
use boundwatch::benchmarks::{
    expected_cost_oracle, nuisance_shift, rollout, sample_dataset, BenchmarkSpec, EnvDistributionParams, Environment,
};
use boundwatch::detectors::baseline::{calibrate, detect, environment_score, BaselineVerdict, ScoreKind};
use boundwatch::distributions::DiagonalGaussian;
use boundwatch::harness::persist::{persist_results, RunOutput};
use boundwatch::harness::sweep::{sweep_prepared, DetectorKind};
use boundwatch::harness::{load_sweep, prepare, run_guarantee_validation, ExperimentConfig, HarnessError};
use boundwatch::seeds;
use boundwatch::training::{es_gradient, estimate_bound, reparam_gradient, train, GradientMethod, TrainConfig};
use rand::Rng;

fn nav_params(obstacles: usize, min_gap: f64) -> EnvDistributionParams {
    EnvDistributionParams::PrimitiveNav(NavParams {
        obstacle_count: obstacles,
        min_gap,
        position_box: Rect { x_min: 1.3, x_max: 2.0, y_min: -1.0, y_max: 1.0 },
        exposure_gain: [1.0, 1.0],
    })
}

fn nav_spec() -> (NavSpec, BenchmarkSpec) {
    let nav = NavSpec::default();
    (nav.clone(), BenchmarkSpec::PrimitiveNav(nav))
}

/// Policy that always scores primitive `k` highest.
fn constant_policy(nav: &NavSpec, k: usize) -> Vec<f64> {
    let stride = nav.depth_bins + 1;
    let mut w = vec![0.0; nav.primitives * stride];
    w[k * stride + nav.depth_bins] = 1.0;
    w
}

/// Cheap navigation experiment used by the harness tests.
fn small_nav_config(dir: &std::path::Path) -> ExperimentConfig {
    let text = format!(
        r#"{{
  "version": 1, "run_id": "small", "seed": 5, "output_dir": {:?},
  "benchmark": {{"family": "PrimitiveNav"}},
  "prior": {{"kind": "regression", "samples": 300, "variance": 0.0025}},
  "train_params": {{"family": "PrimitiveNav", "obstacle_count": 9, "min_gap": 0.3,
    "position_box": {{"x_min": 1.3, "x_max": 2.0, "y_min": -1.0, "y_max": 1.0}}}},
  "training": {{"learning_rate": 0.0001, "es_samples": 4, "iterations": 2, "method": "ES"}},
  "m": 300, "n": 10, "trials_per_cell": 50, "oracle_samples": 1000,
  "detectors": {{"baseline_holdout": 200}},
  "test_grid": [
    {{"label": "empty", "params": {{"family": "PrimitiveNav", "obstacle_count": 0, "min_gap": 0.4,
      "position_box": {{"x_min": 1.3, "x_max": 2.0, "y_min": -1.0, "y_max": 1.0}}}}}},
    {{"label": "nuisance", "nuisance": true}},
    {{"label": "blocked", "params": {{"family": "PrimitiveNav", "obstacle_count": 30, "min_gap": 0.0,
      "position_box": {{"x_min": 1.3, "x_max": 2.0, "y_min": -1.0, "y_max": 1.0}}}}}}
  ],
  "rate_grid": [[0.05, 0.05], [0.4, 0.4]]
}}"#,
        dir.display().to_string()
    );
    let config = ExperimentConfig::from_json(&text).unwrap();
    config.validate().unwrap();
    config
}

fn quad_setup() -> (BenchmarkSpec, EnvDistributionParams, DiagonalGaussian) {
    let spec = BenchmarkSpec::SmoothQuadratic(QuadraticSpec { dim: 3, beta: 4.0 });
    let params = EnvDistributionParams::SmoothQuadratic(QuadraticParams {
        center: vec![0.6, -0.4, 0.3],
        spread: 0.4,
        observation_noise: 0.0,
    });
    (spec, params, DiagonalGaussian::isotropic(vec![0.0; 3], 0.1).unwrap())
}

#[test]
fn training_lowers_the_quadratic_bound() {
    let (spec, params, prior) = quad_setup();
    let data = sample_dataset(&spec, &params, 100, 3).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.3,
        es_samples: 16,
        iterations: 40,
        seed: 9,
        delta: 0.05,
        method: GradientMethod::Reparam,
        ..TrainConfig::default()
    };
    let (post, trace) = train(&prior, &data, &spec, &cfg).unwrap();
    let before = estimate_bound(&prior, &prior, &data, &spec, 4000, 0.05, 1).unwrap();
    let after = estimate_bound(&post, &prior, &data, &spec, 4000, 0.05, 1).unwrap();
    assert!(after < before - 0.02, "bound {before} -> {after}");
    assert_eq!(trace.len(), 40);
    assert!(trace.records.last().unwrap().bound < trace.records[0].bound);
}

#[test]
fn es_and_reparam_gradients_share_a_mean() {
    let (spec, params, prior) = quad_setup();
    let data = sample_dataset(&spec, &params, 50, 4).unwrap();
    let post = DiagonalGaussian::new(vec![0.1, -0.1, 0.05], vec![0.09f64.ln(), 0.1f64.ln(), 0.11f64.ln()]).unwrap();
    let reps = 40;
    let mut rng = seeds::rng(12);
    let flat = |g: boundwatch::GaussianGradient| g.to_flat();
    let es: Vec<Vec<f64>> =
        (0..reps).map(|_| flat(es_gradient(&post, &prior, &data, &spec, 2000, 0.05, &mut rng).unwrap())).collect();
    let rp: Vec<Vec<f64>> =
        (0..reps).map(|_| flat(reparam_gradient(&post, &prior, &data, &spec, 200, 0.05, &mut rng).unwrap())).collect();
    let stats = |v: &[Vec<f64>], j: usize| {
        let n = v.len() as f64;
        let m = v.iter().map(|g| g[j]).sum::<f64>() / n;
        let var = v.iter().map(|g| (g[j] - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, var / n)
    };
    for j in 0..6 {
        let (a, va) = stats(&es, j);
        let (b, vb) = stats(&rp, j);
        let z = (a - b).abs() / (va + vb).sqrt();
        assert!(z < 4.0, "component {j}: ES {a} vs reparam {b} ({z:.1} SE)");
    }
}

#[test]
fn nuisance_shift_keeps_every_cost() {
    let (nav, spec) = nav_spec();
    let train = nav_params(9, 0.3);
    let shifted = nuisance_shift(&train);
    let w = constant_policy(&nav, 3);
    let a = expected_cost_oracle(&spec, &train, &w, 5000, 8).unwrap();
    let b = expected_cost_oracle(&spec, &shifted, &w, 5000, 8).unwrap();
    assert_eq!(a.estimate, b.estimate);

    let (qspec, qparams, _) = quad_setup();
    let w = vec![0.2, 0.1, -0.3];
    let a = expected_cost_oracle(&qspec, &qparams, &w, 5000, 8).unwrap();
    let b = expected_cost_oracle(&qspec, &nuisance_shift(&qparams), &w, 5000, 8).unwrap();
    assert_eq!(a.estimate, b.estimate);
}

#[test]
fn baseline_threshold_follows_the_quantile() {
    let (_, spec) = nav_spec();
    let train = nav_params(9, 0.3);
    let mut rng = seeds::rng(2);
    let w: Vec<f64> = (0..spec.policy_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    for kind in ScoreKind::ALL {
        let median = calibrate(kind, &spec, &train, &w, 2000, 0.5, 10).unwrap();
        let max = calibrate(kind, &spec, &train, &w, 2000, 1.0, 10).unwrap();
        let trials = 4000u64;
        let (mut flagged_median, mut flagged_max) = (0, 0);
        for i in 0..trials {
            let env = spec.sample_environment(&train, seeds::derive(77, &[i]));
            let s = environment_score(kind, &spec, &env, &w);
            flagged_median += usize::from(detect(&median, &[s]).unwrap() == BaselineVerdict::Ood);
            flagged_max += usize::from(detect(&max, &[s]).unwrap() == BaselineVerdict::Ood);
        }
        let frac = flagged_median as f64 / trials as f64;
        assert!((frac - 0.5).abs() < 0.05, "{}: median threshold flags {frac}", kind.as_str());
        assert!(flagged_max as f64 / (trials as f64) < 0.005, "{}: max threshold flags {flagged_max}", kind.as_str());
    }
}

#[test]
fn nuisance_scores_look_more_anomalous() {
    let (nav, spec) = nav_spec();
    let train = nav_params(9, 0.3);
    let shifted = nuisance_shift(&train);
    let w = constant_policy(&nav, 3).iter().enumerate().map(|(i, v)| v + 0.3 * ((i % 7) as f64 - 3.0)).collect::<Vec<_>>();
    let sample = |p: &EnvDistributionParams, seed: u64| -> Vec<f64> {
        (0..400u64)
            .map(|i| environment_score(ScoreKind::Msp, &spec, &spec.sample_environment(p, seeds::derive(seed, &[i])), &w))
            .collect()
    };
    let (a, b) = (sample(&train, 1), sample(&shifted, 2));
    // Mann-Whitney U: fraction of pairs where the shifted score wins.
    let mut wins = 0.0;
    for x in &b {
        for y in &a {
            wins += if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 };
        }
    }
    let auc = wins / (a.len() * b.len()) as f64;
    let se = ((a.len() + b.len() + 1) as f64 / (12.0 * a.len() as f64 * b.len() as f64)).sqrt();
    assert!((auc - 0.5) / se > 5.0, "AUC {auc}");
}

#[test]
fn more_obstacles_cost_more() {
    let (nav, spec) = nav_spec();
    let w = constant_policy(&nav, 3);
    let costs: Vec<f64> = [0, 4, 12, 30]
        .iter()
        .map(|&k| expected_cost_oracle(&spec, &nav_params(k, 0.0), &w, 4000, 6).unwrap().estimate)
        .collect();
    assert_eq!(costs[0], 0.0);
    assert!(costs.windows(2).all(|p| p[1] > p[0]), "{costs:?}");
}

#[test]
fn costs_stay_in_the_unit_interval() {
    let (_, spec) = nav_spec();
    let (qspec, _, _) = quad_setup();
    let mut rng = seeds::rng(31);
    for i in 0..100_000u64 {
        let (s, params, dim) = if i % 2 == 0 {
            (&spec, nav_params(rng.random_range(0..40), rng.random_range(0.0..0.8)), spec.policy_dim())
        } else {
            let p = EnvDistributionParams::SmoothQuadratic(QuadraticParams {
                center: (0..3).map(|_| rng.random_range(-3.0..3.0)).collect(),
                spread: rng.random_range(0.0..2.0),
                observation_noise: rng.random_range(0.0..2.0),
            });
            (&qspec, p, 3)
        };
        let env = s.sample_environment(&params, rng.random());
        let w: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
        let c = s.cost(&env, &w);
        assert!((0.0..=1.0).contains(&c), "cost {c}");
    }
}

#[test]
fn single_obstacle_matches_brute_force_clearance() {
    let (nav, spec) = nav_spec();
    let mut rng = seeds::rng(17);
    for _ in 0..200 {
        let c = [rng.random_range(0.3..2.4), rng.random_range(-0.8..0.8)];
        let env = Environment::PrimitiveNav(nav.render(vec![c], 0, 1.0));
        for k in 0..nav.primitives {
            let end = [nav.path_length, nav.lateral_offset(k)];
            let steps = 20_000;
            let brute = (0..=steps)
                .map(|i| {
                    let t = i as f64 / steps as f64;
                    ((c[0] - t * end[0]).powi(2) + (c[1] - t * end[1]).powi(2)).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            let expected = (1.0 - (brute - nav.obstacle_radius).max(0.0) / nav.d_thresh).max(0.0);
            let result = rollout(&spec, &env, &constant_policy(&nav, k));
            assert_eq!(result.chosen_primitive, Some(k));
            assert!((result.cost - expected).abs() < 1e-3, "obstacle {c:?} primitive {k}: {} vs {expected}", result.cost);
        }
    }
}

#[test]
fn sweep_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_nav_config(dir.path());
    let prepared = prepare(&config).unwrap();
    let sweep = sweep_prepared(&config, &prepared).unwrap();
    let out = persist_results(&RunOutput { sweep: Some(sweep.clone()), ..RunOutput::default() }, dir.path(), "small")
        .unwrap();
    assert_eq!(load_sweep(&out).unwrap(), sweep);

    let long = std::fs::read_to_string(out.join("plotdata/sweep_long.csv")).unwrap();
    let per_cell: usize = DetectorKind::ALL.iter().map(|k| k.verdict_labels().len()).sum();
    assert_eq!(long.lines().count(), 1 + config.test_grid.len() * per_cell);
    let wide = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(wide.lines().count(), 1 + config.test_grid.len() * DetectorKind::ALL.len());
}

#[test]
fn empty_sweep_writes_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_nav_config(dir.path());
    let prepared = prepare(&config).unwrap();
    config.test_grid.clear();
    let mut sweep = sweep_prepared(&config, &prepared).unwrap();
    sweep.cells.clear();
    let out = persist_results(&RunOutput { sweep: Some(sweep), ..RunOutput::default() }, dir.path(), "empty").unwrap();
    assert_eq!(std::fs::read_to_string(out.join("sweep.csv")).unwrap().lines().count(), 1);
    assert_eq!(std::fs::read_to_string(out.join("plotdata/sweep_long.csv")).unwrap().lines().count(), 1);
}

#[test]
fn invalid_harness_settings_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_nav_config(dir.path());
    assert!(matches!(config.rate_split([1.0, 0.05]), Err(HarnessError::Config(_))));
    assert!(matches!(config.rate_split([0.05, 0.01]), Err(HarnessError::Config(_))));

    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/quadratic_validation.json");
    let mut quad = ExperimentConfig::load(&path).unwrap();
    quad.validation.as_mut().unwrap().trials = 1999;
    assert!(matches!(run_guarantee_validation(&quad), Err(HarnessError::Config(_))));
}

#[test]
fn half_confidence_run_still_separates() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_nav_config(dir.path());
    config.detectors.delta_o = 0.5;
    config.detectors.delta_w = 0.5;
    config.rate_grid = vec![[0.6, 0.6]];
    config.validate().unwrap();
    let prepared = prepare(&config).unwrap();
    let c = &prepared.certified;
    assert!(c.upper.lower_bound <= c.upper.empirical_cost && c.upper.empirical_cost <= c.upper.upper_bound);
    let sweep = sweep_prepared(&config, &prepared).unwrap();
    for cell in &sweep.cells {
        for kind in [DetectorKind::Hypothesis, DetectorKind::ConfidenceInterval] {
            let d = cell.detector(kind);
            let total: usize = ["OOD", "WD", "UNKNOWN"].iter().map(|l| d.rate(l).count).sum();
            assert_eq!(total, d.trials);
        }
    }
    let empty = sweep.cells.iter().find(|c| c.label == "empty").unwrap();
    let blocked = sweep.cells.iter().find(|c| c.label == "blocked").unwrap();
    assert_eq!(empty.detector(DetectorKind::ConfidenceInterval).rate("OOD").count, 0);
    assert_eq!(blocked.detector(DetectorKind::ConfidenceInterval).rate("WD").count, 0);
}
