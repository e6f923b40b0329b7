//! Parameter updates: Adam (default) and plain SGD.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which update rule the trainer applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Per-parameter first/second moment estimates plus the shared step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zeroed moments matching `params` shapes; β1=0.9, β2=0.999, ε=1e-8.
    pub fn new(params: &[Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update over a parameter list.
///
/// Gradients containing non-finite values abort the step so training fails
/// loudly instead of diverging.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[&[f32]],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    check_step_inputs(params, grads, lr)?;
    if state.m.len() != params.len() {
        return Err(Error::Invalid(format!(
            "adam state tracks {} parameters, got {}",
            state.m.len(),
            params.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i];
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for j in 0..p.data.len() {
            let gj = g[j] as f64;
            let mj = state.beta1 * m[j] as f64 + (1.0 - state.beta1) * gj;
            let vj = state.beta2 * v[j] as f64 + (1.0 - state.beta2) * gj * gj;
            m[j] = mj as f32;
            v[j] = vj as f32;
            let m_hat = mj / bc1;
            let v_hat = vj / bc2;
            p.data[j] = (p.data[j] as f64 - lr * m_hat / (v_hat.sqrt() + state.eps)) as f32;
        }
    }
    Ok(())
}

/// Plain gradient descent: p <- p - lr * g.
pub fn sgd_step(params: &mut [Tensor], grads: &[&[f32]], lr: f64) -> Result<()> {
    check_step_inputs(params, grads, lr)?;
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i];
        for j in 0..p.data.len() {
            p.data[j] = (p.data[j] as f64 - lr * g[j] as f64) as f32;
        }
    }
    Ok(())
}

fn check_step_inputs(params: &[Tensor], grads: &[&[f32]], lr: f64) -> Result<()> {
    if lr <= 0.0 {
        return Err(Error::Invalid(format!("learning rate must be positive, got {lr}")));
    }
    if params.len() != grads.len() {
        return Err(Error::Invalid(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.numel() != g.len() {
            return Err(Error::Shape(format!(
                "parameter {} has {} elements but gradient has {}",
                i,
                p.numel(),
                g.len()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient on parameter {i}; aborting the step"
            )));
        }
    }
    Ok(())
}
