//! Central finite-difference check of tape gradients.

use super::tape::Tape;
use super::tape::Var;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Max over coordinates of `|g_ad − g_fd| / (|g_fd| + 1e-8)`.
///
/// `f` builds the loss on a fresh tape from parameter tensors it registers
/// itself (keys `0..params.len()`). It must be deterministic: any randomness
/// has to be frozen inside the closure.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    finite_diff_check_steps(f, params, &vec![step; params.len()])
}

/// As [`finite_diff_check`] with its own step for each parameter tensor.
pub fn finite_diff_check_steps<F>(f: F, params: &[Tensor], steps: &[f64]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    if steps.len() != params.len() || steps.iter().any(|&h| !(h > 0.0)) {
        return Err(Error::contract("finite_diff_check: one positive step per parameter tensor"));
    }
    let eval = |ps: &[Tensor]| -> (Tape, Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps
            .iter()
            .enumerate()
            .map(|(k, p)| tape.param(k, p.clone()))
            .collect();
        let loss = f(&mut tape, &vars);
        (tape, loss)
    };

    let (tape, loss) = eval(params);
    let base = tape.scalar(loss);
    let (tape2, loss2) = eval(params);
    if tape2.scalar(loss2).to_bits() != base.to_bits() {
        return Err(Error::contract(
            "finite_diff_check: loss differs between identical evaluations",
        ));
    }
    let grads = tape.backward(loss)?;

    let mut worst: f64 = 0.0;
    let mut probe = params.to_vec();
    for (k, p) in params.iter().enumerate() {
        let g_ad = grads.get(k).expect("every param has a gradient");
        let step = steps[k];
        for i in 0..p.len() {
            let orig = p.data()[i];
            probe[k].data_mut()[i] = orig + step;
            let (t, l) = eval(&probe);
            let plus = t.scalar(l);
            probe[k].data_mut()[i] = orig - step;
            let (t, l) = eval(&probe);
            let minus = t.scalar(l);
            probe[k].data_mut()[i] = orig;
            let g_fd = (plus - minus) / (2.0 * step);
            let err = (g_ad.data()[i] - g_fd).abs() / (g_fd.abs() + 1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
