//! Minimise the bound on the smooth quadratic benchmark with both gradient
//! estimators and print the training traces side by side.

use boundwatch::benchmarks::{sample_dataset, BenchmarkSpec, EnvDistributionParams, QuadraticParams, QuadraticSpec};
use boundwatch::distributions::DiagonalGaussian;
use boundwatch::training::{estimate_bound, train, GradientMethod, TrainConfig};

fn main() {
    let spec = BenchmarkSpec::SmoothQuadratic(QuadraticSpec { dim: 4, beta: 4.0 });
    let params = EnvDistributionParams::SmoothQuadratic(QuadraticParams {
        center: vec![0.5, 0.5, -0.5, 0.0],
        spread: 0.6,
        observation_noise: 0.0,
    });
    let data = sample_dataset(&spec, &params, 200, 11).unwrap();
    let prior = DiagonalGaussian::isotropic(vec![0.0; 4], 0.1).unwrap();

    for (method, lr) in [(GradientMethod::Reparam, 0.5), (GradientMethod::Es, 0.2)] {
        let cfg = TrainConfig { learning_rate: lr, es_samples: 64, iterations: 40, seed: 1, delta: 0.05, method, ..TrainConfig::default() };
        let (post, trace) = train(&prior, &data, &spec, &cfg).unwrap();
        println!("{method:?}");
        for r in trace.records.iter().step_by(8) {
            println!("  iter {:>2}  bound {:.4}  cost {:.4}  D2 {:.4}", r.iteration, r.bound, r.cost, r.d2);
        }
        let final_bound = estimate_bound(&post, &prior, &data, &spec, 5000, 0.05, 2).unwrap();
        println!("  final bound {final_bound:.4}, mean {:.3?}", post.mean());
    }
}
