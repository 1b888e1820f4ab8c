//! Acceptance suite: one PASS/FAIL line per criterion.

use saddle_scale_core::verify::{format_table, run_checks, VerifyOptions};

#[test]
fn acceptance() {
    let results = run_checks(&VerifyOptions::default()).expect("checks run");
    for r in &results {
        println!(
            "{} {}: {} | measured {} | bound {} | {:.2} s",
            if r.passed { "PASS" } else { "FAIL" },
            r.key,
            r.property,
            r.measured,
            r.bound,
            r.elapsed_s
        );
    }
    let failed: Vec<_> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.key)
        .collect();
    assert!(
        failed.is_empty(),
        "failed checks: {failed:?}\n{}",
        format_table(&results)
    );
}
