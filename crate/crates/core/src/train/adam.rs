//! Adam parameter updates with bias correction.

use crate::error::{Error, Result};
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper {
            lr,
            ..AdamHyper::default()
        }
    }
}

/// First/second moment buffers mirroring the parameter walk order, plus the
/// step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub hyper: AdamHyper,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ModelParams, hyper: AdamHyper) -> Self {
        let mut m = Vec::new();
        params.for_each(|_, p| m.push(vec![0.0; p.data.len()]));
        let v = m.clone();
        AdamState { t: 0, hyper, m, v }
    }
}

/// One update: t += 1; m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2;
/// p -= lr * m_hat / (sqrt(v_hat) + eps) with bias-corrected moments.
/// A non-finite gradient aborts the step, naming the parameter.
pub fn adam_step(params: &mut ModelParams, grads: &[Vec<f64>], state: &mut AdamState) -> Result<()> {
    let tensors = params.tensors_mut();
    if grads.len() != tensors.len() {
        return Err(Error::Contract(format!(
            "adam_step: {} gradients for {} parameters",
            grads.len(),
            tensors.len()
        )));
    }
    for ((name, p), g) in tensors.iter().zip(grads.iter()) {
        if p.data.len() != g.len() {
            return Err(Error::Contract(format!(
                "adam_step: gradient length {} for parameter {name} of {}",
                g.len(),
                p.data.len()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }
    state.t += 1;
    let h = state.hyper;
    let bc1 = 1.0 - h.beta1.powi(state.t as i32);
    let bc2 = 1.0 - h.beta2.powi(state.t as i32);
    let mut tensors = params.tensors_mut();
    for (i, (_, p)) in tensors.iter_mut().enumerate() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for (j, &g) in grads[i].iter().enumerate() {
            m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g;
            v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p.data[j] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
        }
    }
    Ok(())
}
