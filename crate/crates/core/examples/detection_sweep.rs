//! Verdict fractions of both certified detectors over environments of
//! increasing difficulty; writes the plot data to `results/`.

use boundwatch::harness::persist::{persist_results, RunOutput};
use boundwatch::harness::sweep::DetectorKind;
use boundwatch::harness::{run_detection_sweep, ExperimentConfig};
use std::path::Path;

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/nav_sweep.json");
    let config = ExperimentConfig::load(&path).unwrap();
    let sweep = run_detection_sweep(&config).unwrap();
    println!(
        "certificate {}: C_S {:.4} bounds [{:.4}, {:.4}]",
        sweep.certificate_id, sweep.empirical_cost, sweep.lower_bound, sweep.upper_bound
    );
    println!("{:<10} {:>8}  {:>17}  {:>17}", "cell", "gap", "HT ood/wd/unk", "CI ood/wd/unk");
    for cell in &sweep.cells {
        let fr = |k| {
            let d = cell.detector(k);
            format!("{:.2}/{:.2}/{:.2}", d.rate("OOD").rate, d.rate("WD").rate, d.rate("UNKNOWN").rate)
        };
        println!(
            "{:<10} {:>+8.4}  {:>17}  {:>17}",
            cell.label,
            cell.gap,
            fr(DetectorKind::Hypothesis),
            fr(DetectorKind::ConfidenceInterval)
        );
    }
    let out = persist_results(&RunOutput { sweep: Some(sweep), ..RunOutput::default() }, &config.output_dir, &config.run_id)
        .unwrap();
    println!("written to {}", out.display());
}
