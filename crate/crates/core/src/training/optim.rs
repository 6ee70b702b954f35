//! AdamW with decoupled weight decay, plus the warmup/decay schedule.

use thiserror::Error;

use super::HyperParams;
use crate::models::ParamSlot;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("parameter tensor {index}: {params} values, {grads} gradients")]
    ShapeMismatch {
        index: usize,
        params: usize,
        grads: usize,
    },
    #[error("learning rate {0} must be >= 0")]
    NegativeLearningRate(f64),
}

/// First and second moment accumulators, one per parameter tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub step_count: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One AdamW update:
///
/// ```text
/// m ← β₁m + (1−β₁)g        v ← β₂v + (1−β₂)g²
/// m̂ = m/(1−β₁ᵗ)            v̂ = v/(1−β₂ᵗ)
/// θ ← θ − lr·(m̂/(√v̂+ε) + wd·θ)      (wd = 0 for decay-exempt slots)
/// ```
///
/// Moments are allocated lazily on the first step.
pub fn adamw_step(
    params: &mut [ParamSlot<'_>],
    grads: &[&[f64]],
    state: &mut OptimizerState,
    hp: &HyperParams,
    lr: f64,
) -> Result<(), OptimError> {
    if lr < 0.0 {
        return Err(OptimError::NegativeLearningRate(lr));
    }
    let shape_err = |index: usize, params: usize, grads: usize| OptimError::ShapeMismatch { index, params, grads };
    if params.len() != grads.len() {
        return Err(shape_err(params.len(), params.len(), grads.len()));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.values.len() != g.len() {
            return Err(shape_err(i, p.values.len(), g.len()));
        }
    }
    if state.first_moment.is_empty() {
        state.first_moment = params.iter().map(|p| vec![0.0; p.values.len()]).collect();
        state.second_moment = state.first_moment.clone();
    }
    for (i, p) in params.iter().enumerate() {
        if state.first_moment.get(i).map(Vec::len) != Some(p.values.len())
            || state.second_moment.get(i).map(Vec::len) != Some(p.values.len())
        {
            return Err(shape_err(i, p.values.len(), state.first_moment.get(i).map_or(0, Vec::len)));
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, eps) = (hp.adam_beta1, hp.adam_beta2, hp.adam_eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((slot, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut().zip(state.second_moment.iter_mut()))
    {
        let wd = if slot.decay { hp.weight_decay } else { 0.0 };
        for (((theta, &gi), mi), vi) in slot.values.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            let adaptive = if m_hat == 0.0 { 0.0 } else { m_hat / (v_hat.sqrt() + eps) };
            *theta -= lr * (adaptive + wd * *theta);
        }
    }
    Ok(())
}

/// Number of warmup steps: `⌈warmup_fraction · total_steps⌉`.
pub fn warmup_steps(total_steps: u64, warmup_fraction: f64) -> u64 {
    let raw = warmup_fraction * total_steps as f64;
    // absorb representation error such as 0.1 * 30 = 3.0000000000000004
    let rounded = raw.round();
    let w = if (raw - rounded).abs() < 1e-9 { rounded } else { raw.ceil() };
    (w as u64).min(total_steps)
}

/// Linear ramp `0 → lr` over the warmup steps, then linear decay to `0` at `total_steps`.
pub fn lr_at(step: u64, total_steps: u64, hp: &HyperParams) -> f64 {
    let total = total_steps.max(1);
    let step = step.min(total);
    let warm = warmup_steps(total, hp.warmup_fraction);
    if step < warm {
        hp.learning_rate * (step as f64 / warm as f64)
    } else if warm == total {
        hp.learning_rate
    } else {
        hp.learning_rate * ((total - step) as f64 / (total - warm) as f64)
    }
}
