//! Acceptance criteria 1 through 9, one summary line each.
//!
//! Runs without the libtest harness so the report is always printed. Pass
//! criterion numbers as arguments to run a subset, e.g.
//! `cargo test -p ers-core --test acceptance -- 4 6`.

use std::process::ExitCode;

use ers::checks::{run_criterion, CheckConfig, CRITERIA};

fn main() -> ExitCode {
    let wanted: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let cfg = CheckConfig::default();
    let mut summary = Vec::new();
    for (id, _) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let report = run_criterion(id, &cfg).expect("known criterion");
        for line in &report.lines {
            println!("    {line}");
        }
        println!("{report}");
        summary.push(report);
    }
    println!();
    for r in &summary {
        println!("{} criterion {}: {}", if r.passed() { "PASS" } else { "FAIL" }, r.id, r.title);
    }
    if summary.iter().all(|r| r.passed()) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
