//! Central finite-difference gradient oracle.
//!
//! Test-support module: it re-evaluates a forward closure at perturbed
//! inputs and never touches the reverse-mode machinery, so it stays an
//! independent check on `backward`.

use super::record::{Record, Var};
use super::tensor::Tensor;

/// Largest relative mismatch between reverse-mode gradients and central
/// finite differences of `f` over every element of every input.
///
/// `f` receives a fresh record plus one `Var` per input tensor (entered as
/// parameters, in order) and must return a scalar loss. Relative error uses
/// `|a − fd| / max(|a|, |fd|, floor)`.
pub fn max_rel_error<F>(inputs: &[Tensor<f64>], h: f64, floor: f64, f: F) -> f64
where
    F: Fn(&mut Record<f64>, &[Var]) -> Var,
{
    let eval = |tensors: &[Tensor<f64>]| -> f64 {
        let mut rec = Record::new();
        let vars: Vec<Var> = tensors.iter().map(|t| rec.param(t)).collect();
        let loss = f(&mut rec, &vars);
        rec.scalar_value(loss).expect("finite loss")
    };

    // Analytic gradients once.
    let mut rec = Record::new();
    let vars: Vec<Var> = inputs.iter().map(|t| rec.param(t)).collect();
    let loss = f(&mut rec, &vars);
    rec.backward(loss).expect("finite backward");
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| rec.grad(v).expect("param grad").to_vec())
        .collect();

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let orig = input.data()[j];
            work[ti].data_mut()[j] = orig + h;
            let up = eval(&work);
            work[ti].data_mut()[j] = orig - h;
            let down = eval(&work);
            work[ti].data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * h);
            let a = analytic[ti][j];
            let denom = a.abs().max(fd.abs()).max(floor);
            worst = worst.max((a - fd).abs() / denom);
        }
    }
    worst
}
