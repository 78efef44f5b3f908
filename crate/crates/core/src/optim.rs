//! AdamW with bias correction and the per-epoch cosine learning-rate schedule.

use crate::adapter::LinearAdapter;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        AdamWParams {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimError {
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("gradient has {found} entries, expected {expected}")]
    Shape { expected: usize, found: usize },
    #[error("epoch {epoch} out of range for {epochs} epochs")]
    EpochOutOfRange { epoch: usize, epochs: usize },
}

/// First and second moment accumulators shaped like the flattened `(W, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(n: usize) -> Self {
        OptimizerState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn for_adapter(adapter: &LinearAdapter) -> Self {
        Self::new(adapter.param_count())
    }
}

/// One update over a flat parameter slice. `name` labels parameter `k`
/// in the error for a non-finite gradient. Nothing is modified on error.
pub fn adamw_update(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimizerState,
    lr: f64,
    hp: &AdamWParams,
    name: impl Fn(usize) -> String,
) -> Result<(), OptimError> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(OptimError::Shape {
            expected: params.len(),
            found: grads.len(),
        });
    }
    if let Some(k) = grads.iter().position(|g| !g.is_finite()) {
        return Err(OptimError::NonFiniteGradient(name(k)));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for k in 0..params.len() {
        let g = grads[k];
        state.m[k] = hp.beta1 * state.m[k] + (1.0 - hp.beta1) * g;
        state.v[k] = hp.beta2 * state.v[k] + (1.0 - hp.beta2) * g * g;
        let m_hat = state.m[k] / c1;
        let v_hat = state.v[k] / c2;
        params[k] -= lr * (m_hat / (v_hat.sqrt() + hp.epsilon) + hp.weight_decay * params[k]);
    }
    Ok(())
}

/// [`adamw_update`] applied to an adapter's `(W, b)`.
pub fn adamw_step(
    adapter: &mut LinearAdapter,
    grads: &[f64],
    state: &mut OptimizerState,
    lr: f64,
    hp: &AdamWParams,
) -> Result<(), OptimError> {
    let mut params = adapter.params();
    adamw_update(&mut params, grads, state, lr, hp, |k| adapter.param_name(k))?;
    adapter.set_params(&params);
    Ok(())
}

/// `lr_min + 0.5 (lr0 - lr_min)(1 + cos(pi e / (epochs - 1)))`; `lr0` when
/// there is a single epoch.
pub fn cosine_annealed_lr(epoch: usize, epochs: usize, lr0: f64, lr_min: f64) -> Result<f64, OptimError> {
    if epoch >= epochs {
        return Err(OptimError::EpochOutOfRange { epoch, epochs });
    }
    if epochs == 1 {
        return Ok(lr0);
    }
    let phase = std::f64::consts::PI * epoch as f64 / (epochs - 1) as f64;
    Ok(lr_min + 0.5 * (lr0 - lr_min) * (1.0 + phase.cos()))
}
