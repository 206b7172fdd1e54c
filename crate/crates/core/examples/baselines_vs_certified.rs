//! A shift that only changes sensor exposure: softmax baselines raise alarms,
//! the certified detectors do not, because the cost is unchanged.

use boundwatch::harness::sweep::DetectorKind;
use boundwatch::harness::{run_detection_sweep, ExperimentConfig};
use std::path::Path;

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/nav_sweep.json");
    let mut config = ExperimentConfig::load(&path).unwrap();
    config.test_grid.retain(|c| c.label == "training" || c.label == "nuisance");
    config.trials_per_cell = 500;
    let sweep = run_detection_sweep(&config).unwrap();
    for cell in &sweep.cells {
        println!("{} (cost gap {:+.4})", cell.label, cell.gap);
        for kind in DetectorKind::ALL {
            println!("  {:<8} OOD rate {:.3}", kind.as_str(), cell.detector(kind).rate("OOD").rate);
        }
    }
}
