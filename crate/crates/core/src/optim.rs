//! SGD and AdamW (decoupled weight decay) over a flat list of parameter
//! matrices, plus a multi-step learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adamw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First/second moments of one parameter and the number of updates it has
/// received.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    pub m: Matrix,
    pub v: Matrix,
    pub steps: u64,
}

impl MomentState {
    pub fn zeros(shape: (usize, usize)) -> Self {
        Self {
            m: Matrix::zeros(shape.0, shape.1),
            v: Matrix::zeros(shape.0, shape.1),
            steps: 0,
        }
    }
}

/// One AdamW update:
///
/// ```text
/// p ← p − lr·wd·p                      (only when `decay`)
/// m ← β1 m + (1 − β1) g
/// v ← β2 v + (1 − β2) g²
/// p ← p − lr · (m / (1 − β1ᵗ)) / (√(v / (1 − β2ᵗ)) + ε)
/// ```
pub fn adamw_update(
    param: &mut Matrix,
    grad: &Matrix,
    state: &mut MomentState,
    lr: f64,
    hp: &AdamWParams,
    decay: bool,
) {
    debug_assert_eq!(param.shape(), grad.shape());
    state.steps += 1;
    let t = state.steps as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    let shrink = if decay { 1.0 - lr * hp.weight_decay } else { 1.0 };
    let p = param.as_mut_slice();
    let m = state.m.as_mut_slice();
    let v = state.v.as_mut_slice();
    for (i, g) in grad.as_slice().iter().enumerate() {
        p[i] *= shrink;
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
}

pub fn sgd_update(param: &mut Matrix, grad: &Matrix, lr: f64) {
    param.axpy(-lr, grad).expect("gradient mirrors parameter shape");
}

/// Optimizer state for a fixed, ordered list of parameters.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub hp: AdamWParams,
    /// Empty for SGD; one entry per parameter for AdamW.
    pub moments: Vec<MomentState>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, hp: AdamWParams, shapes: &[(usize, usize)]) -> Self {
        let moments = match kind {
            OptimizerKind::Sgd => Vec::new(),
            OptimizerKind::Adamw => shapes.iter().map(|s| MomentState::zeros(*s)).collect(),
        };
        Self { kind, hp, moments }
    }

    /// Applies one update. Parameters whose gradient is `None` are left
    /// untouched (including their moments and weight decay).
    pub fn step(
        &mut self,
        params: Vec<&mut Matrix>,
        grads: &[Option<Matrix>],
        decay: &[bool],
        lr: f64,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != decay.len() {
            return Err(Error::shape(
                "Optimizer::step",
                format!(
                    "{} params, {} grads, {} decay flags",
                    params.len(),
                    grads.len(),
                    decay.len()
                ),
            ));
        }
        for (i, (param, grad)) in params.into_iter().zip(grads).enumerate() {
            let Some(grad) = grad else { continue };
            if grad.shape() != param.shape() {
                return Err(Error::shape(
                    "Optimizer::step",
                    format!("gradient {i} is {:?}, parameter is {:?}", grad.shape(), param.shape()),
                ));
            }
            match self.kind {
                OptimizerKind::Sgd => sgd_update(param, grad, lr),
                OptimizerKind::Adamw => {
                    adamw_update(param, grad, &mut self.moments[i], lr, &self.hp, decay[i])
                }
            }
        }
        Ok(())
    }
}

/// Piecewise-constant schedule: `lr = base · γ^(number of milestones ≤ step)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiStepLr {
    pub base: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

impl MultiStepLr {
    pub fn new(base: f64, milestones: Vec<usize>, gamma: f64) -> Result<Self> {
        if base.is_nan() || base <= 0.0 {
            return Err(Error::Config(format!("learning rate must be positive, got {base}")));
        }
        if milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("milestones must be strictly increasing".into()));
        }
        Ok(Self {
            base,
            milestones,
            gamma,
        })
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let passed = self.milestones.iter().take_while(|m| **m <= step).count();
        self.base * self.gamma.powi(passed as i32)
    }
}
