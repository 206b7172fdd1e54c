//! Certify one policy drawn from a hand-built posterior on the smooth
//! quadratic benchmark and compare the bounds with the true expected cost.

use boundwatch::benchmarks::{dataset_cost, expected_cost_oracle, sample_dataset, BenchmarkSpec, EnvDistributionParams};
use boundwatch::benchmarks::{QuadraticParams, QuadraticSpec};
use boundwatch::certificates::{build_certificate, CertificateFile};
use boundwatch::distributions::{renyi2_divergence, DiagonalGaussian};
use boundwatch::training::finalize_policy;

fn main() {
    let spec = BenchmarkSpec::SmoothQuadratic(QuadraticSpec { dim: 2, beta: 4.0 });
    let params = EnvDistributionParams::SmoothQuadratic(QuadraticParams {
        center: vec![0.5, -0.5],
        spread: 0.5,
        observation_noise: 0.0,
    });
    let prior = DiagonalGaussian::isotropic(vec![0.0, 0.0], 0.1).unwrap();
    let posterior = DiagonalGaussian::new(vec![0.3, -0.3], vec![0.08f64.ln(); 2]).unwrap();
    let d2 = renyi2_divergence(&posterior, &prior).unwrap();

    let policy_seed = 42;
    let policy = finalize_policy(&posterior, policy_seed);
    let truth = expected_cost_oracle(&spec, &params, &policy.weights, 200_000, 9).unwrap();
    for m in [50, 200, 1000, 5000] {
        let data = sample_dataset(&spec, &params, m, 3).unwrap();
        let c_s = dataset_cost(&spec, &data, &policy.weights).unwrap();
        let cert = build_certificate(c_s, d2, m, 0.05, policy_seed).unwrap();
        println!(
            "m = {m:>4}: C_S {:.4}  bounds [{:.4}, {:.4}]  true C_D {:.4}",
            cert.empirical_cost, cert.lower_bound, cert.upper_bound, truth.estimate
        );
        if m == 5000 {
            println!("{}", CertificateFile::new(cert, prior.clone(), posterior.clone()).to_json());
        }
    }
}
