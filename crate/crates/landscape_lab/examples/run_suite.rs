//! Runs the fast exact criteria of the acceptance registry. Pass test names
//! or tags as arguments to pick others, e.g. `cargo run --release --example
//! run_suite -- capacity`.

use landscape_lab::acceptance::registry;
use landscape_lab::stats_harness::{run_suite_with, Selection};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let reg = registry();
    let sel = if args.is_empty() { Selection::Tags(vec!["exact".into()]) } else { Selection::Names(args) };
    for t in reg.select(&sel) {
        println!("selected {} {:?}", t.name, t.tags);
    }
    let reports = run_suite_with(&reg, &sel, 42, |r| println!("{}", r.summary_line()));
    let failed = reports.iter().filter(|r| !r.pass).count();
    println!("{} run, {failed} failed", reports.len());
}
