//! Run both certified detectors on a range of test costs against one
//! certificate.

use boundwatch::certificates::build_certificate;
use boundwatch::detectors::{detect_confidence_interval, detect_hypothesis, CertificatePair};

fn main() {
    let cert = build_certificate(0.3, 0.5, 2000, 0.01, 0).unwrap();
    println!("bounds [{:.4}, {:.4}]", cert.lower_bound, cert.upper_bound);
    let certs = CertificatePair::single(&cert);
    let n = 60;
    for test_cost in [0.0, 0.05, 0.15, 0.3, 0.45, 0.6, 0.8] {
        let ht = detect_hypothesis(test_cost, n, certs, 0.04, 0.04).unwrap();
        let ci = detect_confidence_interval(test_cost, n, certs, 0.01, 0.04, 0.01, 0.04).unwrap();
        println!("C_S' {test_cost:.2}  HT {ht}\n           CI {ci}");
    }
}
