use l2net_core::gradcheck::{run_gradcheck, Scope};
use l2net_core::Result;

/// Prints the per-op finite-difference table. Returns false when any suite
/// failed (the published-alternative gradient suite counts as passed when it
/// fails as documented).
pub fn run(scope: Scope, seed: u64, tolerance: f64) -> Result<bool> {
    let results = run_gradcheck(scope, seed, tolerance)?;
    println!(
        "{:<32} {:>6} {:>9} {:>13}  status",
        "op", "cases", "failures", "max_rel_err"
    );
    let mut all_passed = true;
    for r in &results {
        let status = match (r.expected_fail, r.passed()) {
            (true, true) => "EXPECTED FAIL",
            (true, false) => "FAIL (documented failure did not reproduce)",
            (false, true) => "ok",
            (false, false) => "FAIL",
        };
        println!(
            "{:<32} {:>6} {:>9} {:>13.3e}  {status}",
            r.op, r.cases, r.failures, r.max_rel_err
        );
        all_passed &= r.passed();
    }
    if !all_passed {
        eprintln!("gradient check failed");
    }
    Ok(all_passed)
}
