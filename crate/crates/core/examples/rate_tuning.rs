//! Trade unknown verdicts for error rate: raising the allowed rates shrinks
//! the unknown region, and skewing them toward OOD favours OOD verdicts.

use boundwatch::harness::sweep::DetectorKind;
use boundwatch::harness::{run_rate_tuning, ExperimentConfig};
use std::path::Path;

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/nav_sweep.json");
    let config = ExperimentConfig::load(&path).unwrap();
    let report = run_rate_tuning(&config, &config.rate_grid).unwrap();
    for point in &report.points {
        println!("rates OOD {:.2} WD {:.2}", point.rates[0], point.rates[1]);
        for cell in &point.cells {
            let ci = cell.detectors.iter().find(|d| d.detector == DetectorKind::ConfidenceInterval).unwrap();
            println!(
                "  {:<10} gap {:+.3}  ood {:.3} wd {:.3} unknown {:.3}",
                cell.label,
                cell.gap,
                ci.rate("OOD").rate,
                ci.rate("WD").rate,
                ci.rate("UNKNOWN").rate
            );
        }
    }
}
