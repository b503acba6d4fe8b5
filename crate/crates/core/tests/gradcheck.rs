mod common;

use common::{gradient_check, GRAD_TOL};

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut failures = Vec::new();
    for case in 0..24 {
        let r = gradient_check(case);
        assert!(r.checked > 0, "{}", r.label);
        if r.max_rel_err > GRAD_TOL {
            failures.push(format!("{}: {:.3e} at {}", r.label, r.max_rel_err, r.worst));
        }
    }
    assert!(failures.is_empty(), "{failures:#?}");
}
