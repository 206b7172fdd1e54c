//! Retrain and recertify thousands of times to check how often the bounds
//! and the detectors' error rates hold in practice.

use boundwatch::harness::{run_guarantee_validation, ExperimentConfig};
use std::path::Path;

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/quadratic_validation.json");
    let mut config = ExperimentConfig::load(&path).unwrap();
    config.validation.as_mut().unwrap().datasets_per_trial = 10;
    config.oracle_samples = 5000;
    let r = run_guarantee_validation(&config).unwrap();
    println!("{} retrainings with m = {}, n = {}", r.trials, r.m, r.n);
    for (name, c) in [
        ("upper bound violated", r.upper_violation),
        ("lower bound violated", r.lower_violation),
        ("false positive (CI)", r.false_positive_ci),
        ("false positive (HT)", r.false_positive_ht),
        ("false negative (CI)", r.false_negative_ci),
        ("false negative (HT)", r.false_negative_ht),
    ] {
        println!("  {name:<22} {:.4} (n = {:>6}, allowed {:.3})", c.observed.rate, c.observed.trials, c.bound);
    }
    println!("  gap lower bound valid  {:.4} (target {})", r.gap_bound_validity.rate, r.gap_confidence);
    println!("  mean C_S {:.4}, mean C_D {:.4}, mean upper bound {:.4}", r.mean_train_cost, r.mean_true_cost, r.mean_upper_bound);
}
