mod common;

use common::{op_gradient_errors, rel_err};

#[test]
fn every_op_matches_finite_differences() {
    let errors = op_gradient_errors();
    assert!(errors.len() > 40);
    for (name, err) in errors {
        assert!(err < 1e-4, "{name}: relative error {err:e}");
    }
}

#[test]
fn end_to_end_against_finite_differences() {
    let checked = common::end_to_end_gradient_check();
    assert_eq!(checked.len(), 20);
    for (name, analytic, numeric) in checked {
        assert!(rel_err(analytic, numeric) < 1e-3, "{name}: analytic {analytic:e} numeric {numeric:e}");
    }
}
