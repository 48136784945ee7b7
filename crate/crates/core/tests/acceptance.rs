//! One line per check and one roll-up line per criterion, run twice to
//! compare the scalar outputs bit for bit.
//!
//! The hole-formula sign and magnitude checks print their verdict but do not
//! fail the binary; `hole_formula.rs` asserts them strictly under `--ignored`.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use shapeopt::validation::{determinism_check, run_suite, Check};

const NOT_GATING: [&str; 2] = ["points with matching sign (of 20)", "points within 25% (of 20)"];

fn main() -> ExitCode {
    let start = Instant::now();
    let first = run_suite();
    let second = run_suite();
    let mut all = first.clone();
    all.push(determinism_check(&first, &second));

    for c in &all {
        println!("{c}");
    }
    let mut by_criterion: BTreeMap<u32, Vec<&Check>> = BTreeMap::new();
    for c in &all {
        by_criterion.entry(c.criterion).or_default().push(c);
    }
    let mut gating = 0;
    for (k, checks) in &by_criterion {
        let asserted: Vec<_> = checks.iter().filter(|c| c.asserted()).collect();
        let failed: Vec<_> = asserted.iter().filter(|c| !c.passed).collect();
        let verdict = if failed.is_empty() { "PASS" } else { "FAIL" };
        println!(
            "criterion {k:>2}: {verdict} ({} of {} asserted checks within tolerance)",
            asserted.len() - failed.len(),
            asserted.len()
        );
        gating += failed.iter().filter(|c| !NOT_GATING.contains(&c.name.as_str())).count();
    }
    println!("suite ran twice in {:.1}s", start.elapsed().as_secs_f64());
    if gating > 0 {
        println!("{gating} gating check(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
