//! Run the full invariant audit battery in process and print one line per
//! check (the same battery behind `dln audit`).
//!
//!     cargo run --release --example invariant_audit

use dln::harness::audit;

fn main() {
    let report = audit::run_audit(1);
    for check in &report.checks {
        println!(
            "{}: {} (residual {:.3e}, tolerance {:.3e}){}",
            if check.pass { "PASS" } else { "FAIL" },
            check.name,
            check.residual,
            check.tolerance,
            if check.note.is_empty() {
                String::new()
            } else {
                format!(" — {}", check.note)
            }
        );
    }
    println!("{} passed, {} failed", report.passed, report.failed);
    std::process::exit(if report.all_pass() { 0 } else { 1 });
}
