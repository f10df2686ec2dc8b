//! Acceptance suite runner.
//!
//! Runs every criterion (or those whose id or title contains one of the
//! command-line filters), prints one PASS/FAIL line each and exits non-zero
//! if any criterion fails.
//!
//! ```text
//! cargo test -p dno-validation --test acceptance
//! cargo test -p dno-validation --test acceptance -- c05 c10
//! ```

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use dno_validation::{criteria, Verdict};

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<_> = criteria()
        .into_iter()
        .filter(|c| {
            filters.is_empty() || filters.iter().any(|f| c.id.contains(f.as_str()) || c.title.contains(f.as_str()))
        })
        .collect();
    println!("running {} acceptance criteria", selected.len());
    let mut failed = Vec::new();
    for c in &selected {
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::error(format!("panicked: {msg}"))
        });
        let status = if verdict.pass { "PASS" } else { "FAIL" };
        println!("{status} {} {} [{:.1}s]: {}", c.id, c.title, start.elapsed().as_secs_f64(), verdict.detail);
        if !verdict.pass {
            failed.push(c.id);
        }
    }
    println!(
        "acceptance: {} passed, {} failed{}",
        selected.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({})", failed.join(", ")) }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
