//! Runs every acceptance criterion and prints one line per criterion.
//!
//! `cargo test --test acceptance -- <name-or-tag>...` restricts the run;
//! `LANDSCAPE_LAB_SEED` changes the global seed (default 42).

use std::process::ExitCode;

use landscape_lab::acceptance::registry;
use landscape_lab::stats_harness::{run_suite_with, Selection};

fn main() -> ExitCode {
    let seed = std::env::var("LANDSCAPE_LAB_SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(42);
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let reg = registry();
    let sel = if filters.is_empty() {
        Selection::All
    } else {
        let names: Vec<String> = reg.tests.iter().map(|t| t.name.to_string()).filter(|n| filters.contains(n)).collect();
        if names.is_empty() {
            Selection::Tags(filters)
        } else {
            Selection::Names(names)
        }
    };
    println!("acceptance suite, seed {seed}");
    let reports = run_suite_with(&reg, &sel, seed, |r| println!("{}", r.summary_line()));
    let failed = reports.iter().filter(|r| !r.pass).count();
    println!("{} criteria, {} passed, {} failed", reports.len(), reports.len() - failed, failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
