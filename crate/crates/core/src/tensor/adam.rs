//! Adam optimizer over flat parameter/gradient slices.

use super::TensorError;

/// Adam state for a single parameter tensor. Moment buffers are sized on the
/// first step and must match on every later step; the step counter increases
/// by exactly one per update.
#[derive(Debug, Clone)]
pub struct AdamState {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    /// Standard defaults: beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    pub fn new(lr: f64) -> Self {
        AdamState::with_hyperparams(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            lr,
            beta1,
            beta2,
            eps,
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// One bias-corrected Adam update, in place:
    /// `theta -= lr * mhat / (sqrt(vhat) + eps)` with eps outside the root.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), TensorError> {
        if params.len() != grads.len() {
            return Err(TensorError::LengthMismatch {
                op: "adam_update",
                expected: params.len(),
                got: grads.len(),
            });
        }
        if self.m.is_empty() {
            self.m = vec![0.0; params.len()];
            self.v = vec![0.0; params.len()];
        } else if self.m.len() != params.len() {
            return Err(TensorError::LengthMismatch {
                op: "adam_update",
                expected: self.m.len(),
                got: params.len(),
            });
        }
        if !grads.iter().all(|g| g.is_finite()) {
            return Err(TensorError::NonFinite { op: "adam_update" });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
        Ok(())
    }
}
