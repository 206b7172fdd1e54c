use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use boundwatch::certificates::{Certificate, CertificateFile};
use boundwatch::distributions::DiagonalGaussian;

fn boundwatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_boundwatch")).args(args).env("BOUNDWATCH_THREADS", "1").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Certificate with bounds `[lower, upper]` written next to the test data.
fn write_cert(dir: &Path, lower: f64, upper: f64) -> String {
    let mid = 0.5 * (upper + lower);
    let half = 0.5 * (upper - lower);
    let cert = Certificate::from_regularizer(mid, half * half, 0.1, 200, 0.01, 3);
    let g = DiagonalGaussian::isotropic(vec![0.0; 2], 0.1).unwrap();
    let path = dir.join("cert.json");
    CertificateFile::new(cert, g.clone(), g).save(&path).unwrap();
    path.display().to_string()
}

fn write_costs(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn zero_costs_below_the_lower_bound_are_within_distribution() {
    let dir = tempfile::tempdir().unwrap();
    let cert = write_cert(dir.path(), 0.4, 0.6);
    let costs = write_costs(dir.path(), "zeros.txt", &"0\n".repeat(10));
    let detect = |extra: &[&str]| {
        let mut args = vec!["detect", "--cert", &cert, "--costs", &costs];
        args.extend_from_slice(extra);
        boundwatch(&args)
    };
    // exp(-2 * 10 * 0.4^2) = 0.041 clears the default HT rate of 0.05.
    let ht = detect(&["--method", "ht"]);
    assert_eq!(ht.status.code(), Some(0), "{}{}", stdout(&ht), stderr(&ht));
    assert!(stdout(&ht).starts_with("WD "), "{}", stdout(&ht));
    // At n = 10 the CI margin for 0.04 is 0.401, just wider than the gap.
    let ci = detect(&["--method", "ci"]);
    assert_eq!(ci.status.code(), Some(3), "{}", stdout(&ci));
    let ci = detect(&["--method", "ci", "--rates", "0.1,0.1"]);
    assert_eq!(ci.status.code(), Some(0), "{}", stdout(&ci));
}

#[test]
fn high_costs_are_out_of_distribution() {
    let dir = tempfile::tempdir().unwrap();
    let cert = write_cert(dir.path(), 0.0, 0.2);
    let costs = write_costs(dir.path(), "ones.txt", &"1\n".repeat(20));
    let out = boundwatch(&["detect", "--cert", &cert, "--costs", &costs, "--rates", "0.05,0.05"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("OOD "));
}

#[test]
fn costs_inside_the_bounds_are_unknown() {
    let dir = tempfile::tempdir().unwrap();
    let cert = write_cert(dir.path(), 0.3, 0.5);
    let costs = write_costs(dir.path(), "mid.txt", &"0.4\n".repeat(10));
    let out = boundwatch(&["detect", "--cert", &cert, "--costs", &costs]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stdout(&out).starts_with("UNKNOWN "));
}

#[test]
fn out_of_range_cost_names_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let cert = write_cert(dir.path(), 0.4, 0.6);
    let costs = write_costs(dir.path(), "bad.txt", "0.1\n0.2\n1.5\n");
    let out = boundwatch(&["detect", "--cert", &cert, "--costs", &costs]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn empty_cost_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cert = write_cert(dir.path(), 0.4, 0.6);
    let costs = write_costs(dir.path(), "empty.txt", "");
    let out = boundwatch(&["detect", "--cert", &cert, "--costs", &costs]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no costs"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(boundwatch(&[]).status.code(), Some(2));
    assert_eq!(boundwatch(&["detect"]).status.code(), Some(2));
    assert_eq!(boundwatch(&["frobnicate"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cert = write_cert(dir.path(), 0.4, 0.6);
    let costs = write_costs(dir.path(), "c.txt", "0.1\n");
    let out = boundwatch(&["detect", "--cert", &cert, "--costs", &costs, "--rates", "0.1,0.2,0.3"]);
    assert_eq!(out.status.code(), Some(2));
}

fn quick_config(dir: &Path) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/quadratic_validation.json");
    let mut config: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    config["training"]["iterations"] = 5.into();
    config["run_id"] = "quick".into();
    let out = dir.join("quick.json");
    fs::write(&out, config.to_string()).unwrap();
    out.display().to_string()
}

#[test]
fn train_then_certify_reproduces_the_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick_config(dir.path());
    let results = dir.path().join("results");
    let out = boundwatch(&["train", "--config", &config, "--out", results.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let run = results.join("quick");
    for f in ["config.json", "certificate.json", "trace.csv"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let file = CertificateFile::load(&run.join("certificate.json")).unwrap();
    let trace = fs::read_to_string(run.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 6);

    // Recertify from the stored distributions and per-environment costs.
    let cert = &file.certificate;
    fs::write(dir.path().join("posterior.json"), serde_json::to_string(&file.posterior).unwrap()).unwrap();
    fs::write(dir.path().join("prior.json"), serde_json::to_string(&file.prior).unwrap()).unwrap();
    let costs: String = std::iter::repeat_n(format!("{}\n", cert.empirical_cost), cert.m).collect();
    let costs = write_costs(dir.path(), "costs.txt", &costs);
    let p = |f: &str| dir.path().join(f).display().to_string();
    let out = boundwatch(&[
        "certify",
        "--posterior",
        &p("posterior.json"),
        "--prior",
        &p("prior.json"),
        "--costs",
        &costs,
        "--delta",
        &cert.delta.to_string(),
        "--m",
        &cert.m.to_string(),
        "--policy-seed",
        &cert.policy_seed.to_string(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let again: CertificateFile = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(again.certificate.d2, cert.d2);
    assert!((again.certificate.upper_bound - cert.upper_bound).abs() < 1e-12);

    let wrong_m = boundwatch(&[
        "certify", "--posterior", &p("posterior.json"), "--prior", &p("prior.json"), "--costs", &costs, "--delta",
        "0.01", "--m", "3",
    ]);
    assert_eq!(wrong_m.status.code(), Some(2));
}

#[test]
fn seed_flag_controls_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick_config(dir.path());
    let run = |seed: &str, out: &str| {
        let root = dir.path().join(out);
        let o = boundwatch(&["train", "--config", &config, "--seed", seed, "--out", root.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        fs::read(root.join("quick/certificate.json")).unwrap()
    };
    let (a, b, c) = (run("11", "a"), run("11", "b"), run("12", "c"));
    assert_eq!(a, b);
    assert_ne!(a, c);
}
