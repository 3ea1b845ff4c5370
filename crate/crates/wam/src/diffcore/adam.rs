//! Bias-corrected Adam with an optional decoupled weight-decay term
//! (AdamW when the decay is nonzero; the default decay is 0).

use super::tensor::{Scalar, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First/second moment accumulators, one pair per parameter tensor, plus the
/// step counter used for bias correction.
#[derive(Debug, Clone)]
pub struct AdamState<E> {
    pub m: Vec<Tensor<E>>,
    pub v: Vec<Tensor<E>>,
    pub step: u64,
}

impl<E: Scalar> AdamState<E> {
    pub fn zeros_like(params: &[Tensor<E>]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            step: 0,
        }
    }
}

/// One optimizer step over a parameter list and its aligned gradient list.
/// A non-finite gradient aborts before any parameter or moment is touched.
pub fn adam_step<E: Scalar>(
    params: &mut [Tensor<E>],
    grads: &[Tensor<E>],
    state: &mut AdamState<E>,
    hp: &AdamParams,
    lr: f64,
    names: impl Fn(usize) -> String,
) -> Result<()> {
    assert_eq!(params.len(), grads.len(), "param/grad count mismatch");
    assert_eq!(params.len(), state.m.len(), "param/state count mismatch");
    for (i, g) in grads.iter().enumerate() {
        assert_eq!(
            g.shape(),
            params[i].shape(),
            "gradient shape mismatch for parameter {i}"
        );
        if !g.is_finite() {
            return Err(Error::NanGradient { name: names(i) });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let b1 = E::from_f64(hp.beta1).unwrap();
    let b2 = E::from_f64(hp.beta2).unwrap();
    let one = E::one();
    let eps = E::from_f64(hp.eps).unwrap();
    let lr_e = E::from_f64(lr).unwrap();
    let wd = E::from_f64(hp.weight_decay).unwrap();
    let c1 = one / (one - b1.powi(t));
    let c2 = one / (one - b2.powi(t));

    for i in 0..params.len() {
        let p = params[i].data_mut();
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (one - b1) * g[j];
            v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
            let mhat = m[j] * c1;
            let vhat = v[j] * c2;
            let mut upd = mhat / (vhat.sqrt() + eps);
            if hp.weight_decay != 0.0 {
                upd = upd + wd * p[j];
            }
            p[j] = p[j] - lr_e * upd;
        }
    }
    Ok(())
}
