//! Central finite-difference gradient checking. Test-support code: the
//! independent oracle against which every primitive's analytic gradient is
//! validated.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::Result;
use crate::mathx;
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct FdConfig {
    /// Central-difference step.
    pub h: f64,
    pub rel_tol: f64,
    pub abs_floor: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig { h: 1e-5, rel_tol: 1e-4, abs_floor: 1e-7 }
    }
}

/// Scalar loss builder: receives leaf tensors matching the supplied inputs.
pub type LossBuilder<'a> = &'a dyn Fn(&Tape, &[Tensor]) -> Result<Tensor>;

fn eval_loss(inputs: &[(Vec<f64>, Vec<usize>)], build: LossBuilder<'_>) -> Result<f64> {
    let tape = Tape::new();
    let leaves: Result<Vec<Tensor>> =
        inputs.iter().map(|(data, shape)| tape.leaf(data.clone(), shape, true)).collect();
    build(&tape, &leaves?)?.item()
}

/// Compare analytic gradients of `build`'s scalar output against central
/// finite differences for every element of every input. Returns a
/// description of the first mismatch.
pub fn check_gradients(
    inputs: &[(Vec<f64>, Vec<usize>)],
    build: LossBuilder<'_>,
    cfg: &FdConfig,
) -> core::result::Result<(), String> {
    // analytic pass
    let tape = Tape::new();
    let leaves: Vec<Tensor> = inputs
        .iter()
        .map(|(data, shape)| tape.leaf(data.clone(), shape, true))
        .collect::<Result<_>>()
        .map_err(|e| format!("leaf construction failed: {e}"))?;
    let loss = build(&tape, &leaves).map_err(|e| format!("forward failed: {e}"))?;
    loss.backward().map_err(|e| format!("backward failed: {e}"))?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .enumerate()
        .map(|(i, t)| t.grad().unwrap_or_else(|| alloc::vec![0.0; inputs[i].0.len()]))
        .collect();

    for (arg, (data, _)) in inputs.iter().enumerate() {
        for elem in 0..data.len() {
            let mut plus = inputs.to_vec();
            plus[arg].0[elem] += cfg.h;
            let mut minus = inputs.to_vec();
            minus[arg].0[elem] -= cfg.h;
            let f_plus = eval_loss(&plus, build).map_err(|e| format!("fd eval failed: {e}"))?;
            let f_minus = eval_loss(&minus, build).map_err(|e| format!("fd eval failed: {e}"))?;
            let fd = (f_plus - f_minus) / (2.0 * cfg.h);
            let an = analytic[arg][elem];
            let tol = cfg.abs_floor.max(cfg.rel_tol * mathx::abs(fd).max(mathx::abs(an)));
            if mathx::abs(fd - an) > tol {
                return Err(format!(
                    "gradient mismatch at input {arg} element {elem}: analytic {an:.9e}, finite-difference {fd:.9e}"
                ));
            }
        }
    }
    Ok(())
}

/// Fixed-weight scalarization `sum(t * w)` so non-scalar outputs exercise
/// non-uniform upstream gradients.
pub fn weighted_sum(t: &Tensor, weights: &[f64]) -> Result<Tensor> {
    let w = t.tape().constant(weights.to_vec(), &t.shape())?;
    t.mul(&w)?.sum_all()
}
