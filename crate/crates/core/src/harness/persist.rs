//! Writes run artifacts to `<root>/<run_id>/`:
//!
//! ```text
//! config.json        the resolved experiment config
//! certificate.json   certificate, prior and posterior
//! trace.csv          training trace
//! sweep.csv/json     one row per cell × detector
//! rates.csv/json     one row per rate point × cell × detector
//! validation.json    guarantee validation report
//! plotdata/*.csv     long format: one row per cell × detector × verdict
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use super::rates::RateReport;
use super::sweep::SweepResult;
use super::validation::ValidationReport;
use super::HarnessError;
use crate::certificates::CertificateFile;
use crate::training::TrainTrace;

/// Everything a CLI invocation may persist; absent parts are skipped.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub config: Option<ExperimentConfig>,
    pub certificate: Option<CertificateFile>,
    pub trace: Option<TrainTrace>,
    pub sweep: Option<SweepResult>,
    pub rates: Option<RateReport>,
    pub validation: Option<ValidationReport>,
}

pub fn write_sweep_csv<W: Write>(sweep: &SweepResult, writer: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record([
        "cell", "label", "gap", "gap_se", "test_cost", "test_cost_se", "detector", "trials", "ood_frac", "ood_se",
        "wd_frac", "wd_se", "unknown_frac", "unknown_se", "not_ood_frac", "not_ood_se", "indicators",
    ])?;
    for (c, cell) in sweep.cells.iter().enumerate() {
        for det in &cell.detectors {
            let mut row = vec![
                c.to_string(),
                cell.label.clone(),
                cell.gap.to_string(),
                cell.gap_se.to_string(),
                cell.test_cost.estimate.to_string(),
                cell.test_cost.std_error.to_string(),
                det.detector.as_str().to_string(),
                det.trials.to_string(),
            ];
            for label in ["OOD", "WD", "UNKNOWN", "NOT_OOD"] {
                let r = det.rate(label);
                row.push(r.rate.to_string());
                row.push(r.std_error.to_string());
            }
            let indicators: Vec<String> = det.indicators.iter().map(|i| format!("{}={}", i.name, i.value)).collect();
            row.push(indicators.join(";"));
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Plot-ready rows: cost gap on x, verdict fraction on y.
pub fn write_sweep_long_csv<W: Write>(sweep: &SweepResult, writer: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["cell", "label", "gap", "gap_se", "detector", "verdict", "count", "trials", "fraction", "std_error"])?;
    for (c, cell) in sweep.cells.iter().enumerate() {
        for det in &cell.detectors {
            for label in det.detector.verdict_labels() {
                let r = det.rate(label);
                out.write_record([
                    c.to_string(),
                    cell.label.clone(),
                    cell.gap.to_string(),
                    cell.gap_se.to_string(),
                    det.detector.as_str().to_string(),
                    label.to_string(),
                    r.count.to_string(),
                    r.trials.to_string(),
                    r.rate.to_string(),
                    r.std_error.to_string(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_rates_csv<W: Write>(report: &RateReport, writer: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record([
        "ood_rate", "wd_rate", "cell", "label", "gap", "detector", "trials", "ood_frac", "ood_se", "wd_frac", "wd_se",
        "unknown_frac", "unknown_se",
    ])?;
    for point in &report.points {
        for (c, cell) in point.cells.iter().enumerate() {
            for det in &cell.detectors {
                let mut row = vec![
                    point.rates[0].to_string(),
                    point.rates[1].to_string(),
                    c.to_string(),
                    cell.label.clone(),
                    cell.gap.to_string(),
                    det.detector.as_str().to_string(),
                    det.trials.to_string(),
                ];
                for label in ["OOD", "WD", "UNKNOWN"] {
                    let r = det.rate(label);
                    row.push(r.rate.to_string());
                    row.push(r.std_error.to_string());
                }
                out.write_record(&row)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_rates_long_csv<W: Write>(report: &RateReport, writer: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["ood_rate", "wd_rate", "cell", "label", "gap", "detector", "verdict", "fraction", "std_error"])?;
    for point in &report.points {
        for (c, cell) in point.cells.iter().enumerate() {
            for det in &cell.detectors {
                for label in det.detector.verdict_labels() {
                    let r = det.rate(label);
                    out.write_record([
                        point.rates[0].to_string(),
                        point.rates[1].to_string(),
                        c.to_string(),
                        cell.label.clone(),
                        cell.gap.to_string(),
                        det.detector.as_str().to_string(),
                        label.to_string(),
                        r.rate.to_string(),
                        r.std_error.to_string(),
                    ])?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::json(path, e))?;
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn write_csv_file(
    path: &Path,
    write: impl FnOnce(fs::File) -> Result<(), csv::Error>,
) -> Result<(), HarnessError> {
    let file = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    write(file).map_err(|e| HarnessError::csv(path, e))
}

/// Writes every present part of `output` under `<root>/<run_id>/` and
/// returns that directory.
pub fn persist_results(output: &RunOutput, root: &Path, run_id: &str) -> Result<PathBuf, HarnessError> {
    let dir = root.join(run_id);
    let plot = dir.join("plotdata");
    fs::create_dir_all(&plot).map_err(|e| HarnessError::io(&plot, e))?;
    if let Some(config) = &output.config {
        write_json(&dir.join("config.json"), config)?;
    }
    if let Some(cert) = &output.certificate {
        let path = dir.join("certificate.json");
        fs::write(&path, cert.to_json()).map_err(|e| HarnessError::io(&path, e))?;
    }
    if let Some(trace) = &output.trace {
        write_csv_file(&dir.join("trace.csv"), |f| trace.write_csv(f))?;
    }
    if let Some(sweep) = &output.sweep {
        write_csv_file(&dir.join("sweep.csv"), |f| write_sweep_csv(sweep, f))?;
        write_csv_file(&plot.join("sweep_long.csv"), |f| write_sweep_long_csv(sweep, f))?;
        write_json(&dir.join("sweep.json"), sweep)?;
    }
    if let Some(rates) = &output.rates {
        write_csv_file(&dir.join("rates.csv"), |f| write_rates_csv(rates, f))?;
        write_csv_file(&plot.join("rates_long.csv"), |f| write_rates_long_csv(rates, f))?;
        write_json(&dir.join("rates.json"), rates)?;
    }
    if let Some(validation) = &output.validation {
        write_json(&dir.join("validation.json"), validation)?;
    }
    Ok(dir)
}

/// Reads back `sweep.json` from a run directory.
pub fn load_sweep(dir: &Path) -> Result<SweepResult, HarnessError> {
    let path = dir.join("sweep.json");
    let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::json(&path, e))
}
