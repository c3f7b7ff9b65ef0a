//! Reverse-mode gradients against central finite differences.

mod common;

use common::{controller_error, model_error, op_cases, op_error, MODEL_TOL, OP_TOL, SEEDS};

#[test]
fn every_op_matches_central_differences() {
    let mut failures = Vec::new();
    for case in op_cases() {
        let err = op_error(case.name, case.inputs, case.op);
        if !(err < OP_TOL) {
            failures.push(format!("{}: {err:e}", case.name));
        }
    }
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn full_model_on_two_phonemes() {
    for seed in 0..SEEDS {
        let err = model_error(seed);
        assert!(err < MODEL_TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn controller_policy_gradient() {
    for seed in 0..SEEDS {
        let err = controller_error(seed);
        assert!(err < OP_TOL, "seed {seed}: {err:e}");
    }
}
