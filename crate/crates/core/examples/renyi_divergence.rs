//! Closed-form Rényi-2 divergence between diagonal Gaussians, checked
//! against a Monte-Carlo estimate, and the variance projection that keeps it
//! finite.

use boundwatch::distributions::{project_variances, renyi2_divergence, DiagonalGaussian};
use boundwatch::seeds;

fn main() {
    let prior = DiagonalGaussian::isotropic(vec![0.0, 0.0, 0.0], 0.2).unwrap();
    let mut rng = seeds::rng(1);
    for (shift, scale) in [(0.0, 1.0), (0.3, 1.0), (0.3, 0.7), (0.0, 1.5), (0.5, 1.2)] {
        let post = DiagonalGaussian::new(vec![shift; 3], vec![(0.2 * scale as f64).ln(); 3]).unwrap();
        let d2 = renyi2_divergence(&post, &prior).unwrap();
        // D2 = ln E_P[P / P0].
        let samples = 100_000;
        let mc: f64 = (0..samples)
            .map(|_| {
                let w = post.sample(&mut rng);
                (post.log_density(&w).unwrap() - prior.log_density(&w).unwrap()).exp()
            })
            .sum::<f64>()
            / samples as f64;
        println!("shift {shift:.1} s/s0 {scale:.1}: closed form {d2:.4}, Monte Carlo {:.4}", mc.ln());
    }

    let wide = DiagonalGaussian::new(vec![0.0; 3], vec![(0.2f64 * 2.5).ln(); 3]).unwrap();
    println!("s = 2.5 s0: D2 = {}", renyi2_divergence(&wide, &prior).unwrap());
    let projected = project_variances(&wide, &prior, 0.05).unwrap();
    println!(
        "after projection s = {:.4}, D2 = {:.4}",
        projected.variances().next().unwrap(),
        renyi2_divergence(&projected, &prior).unwrap()
    );
}
