//! Central finite-difference oracle for gradient tests.

use crate::autodiff::{Tape, Tensor};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// Compare tape gradients against central finite differences.
///
/// `build` must construct the loss from the given parameter handles and be
/// deterministic in their values (stochastic ops must re-seed internally).
/// Returns the largest relative error seen across all parameter elements.
pub fn max_rel_err<F>(params: &[&Tensor], build: F) -> f64
where
    F: Fn() -> Result<Tensor>,
{
    let tape = Tape::new();
    for p in params {
        p.clear_grad();
        tape.watch(p);
    }
    let loss = build().expect("loss construction failed");
    tape.backward(&loss).expect("backward failed");
    let grads: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().expect("missing gradient"))
        .collect();
    drop(tape);

    let mut worst: f64 = 0.0;
    for (p, g) in params.iter().zip(&grads) {
        for i in 0..p.numel() {
            let orig = p.values()[i];
            let mut vals = p.value_vec();
            vals[i] = orig + FD_STEP;
            p.set_values(&vals);
            let up = build().expect("loss eval failed").item();
            vals[i] = orig - FD_STEP;
            p.set_values(&vals);
            let down = build().expect("loss eval failed").item();
            vals[i] = orig;
            p.set_values(&vals);

            let fd = (up - down) / (2.0 * FD_STEP);
            let an = g[i];
            let denom = fd.abs().max(an.abs()).max(1e-6);
            worst = worst.max((fd - an).abs() / denom);
        }
    }
    worst
}

/// Assert the finite-difference check passes at the standard tolerance.
pub fn assert_grads_match<F>(params: &[&Tensor], build: F)
where
    F: Fn() -> Result<Tensor>,
{
    let err = max_rel_err(params, build);
    assert!(
        err < FD_TOL,
        "gradient mismatch: max relative error {err:.3e} >= {FD_TOL:.0e}"
    );
}
