//! Finite-difference verification of every backward pass, and the documented
//! failure of the published alternative form of the euclidean-pooling
//! gradient.

use l2net_core::gradcheck::{run_gradcheck, Scope};

#[test]
fn analytic_gradients_match_central_differences() {
    let results = run_gradcheck(Scope::All, 2024, 1e-4).unwrap();
    let mut checked = 0;
    for r in &results {
        if r.expected_fail {
            continue;
        }
        checked += 1;
        assert_eq!(r.cases, 100, "{} ran {} cases", r.op, r.cases);
        assert_eq!(
            r.failures, 0,
            "{}: {}/{} cases exceeded 1e-4 (worst {:.3e})",
            r.op, r.failures, r.cases, r.max_rel_err
        );
    }
    // l2 (plain + global), conv, max pool, two residual kinds, three losses,
    // two pyramid modes.
    assert_eq!(checked, 11, "a suite went missing");
}

#[test]
fn published_alternative_gradient_fails_differencing() {
    let results = run_gradcheck(Scope::L2, 77, 1e-4).unwrap();
    let alt = results
        .iter()
        .find(|r| r.expected_fail)
        .expect("alternative-gradient suite missing");
    assert_eq!(alt.cases, 100);
    assert!(
        alt.failures >= 95,
        "alternative form failed only {}/{} cases; it should disagree with \
         finite differences almost everywhere",
        alt.failures,
        alt.cases
    );
    assert!(alt.passed(), "expected-fail accounting is wrong");
}

#[test]
fn unreasonably_tight_tolerance_reports_failures() {
    let results = run_gradcheck(Scope::Layers, 5, 1e-14).unwrap();
    let total_failures: usize = results.iter().map(|r| r.failures).sum();
    assert!(
        total_failures > 0,
        "central differences cannot be exact to 1e-14; the failure path must trigger"
    );
}
