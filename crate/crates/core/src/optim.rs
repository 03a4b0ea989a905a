//! Adam optimizer with per-parameter step counts, plus global-norm gradient
//! clipping.
//!
//! Step counts are tracked per parameter rather than globally so that a
//! parameter frozen for some steps (modality masking freezes the masked
//! modality's refinement layer) keeps correct bias correction when it
//! resumes: its `t` only advances on steps where it actually received a
//! gradient, and a fully skipped parameter stays bitwise identical.

use crate::params::ParamSet;
use crate::tensor::TensorError;

/// Adam state; moment buffers are indexed like the [`ParamSet`] the
/// optimizer was created for.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// First-moment estimates, one buffer per parameter tensor.
    pub m: Vec<Vec<f64>>,
    /// Second-moment estimates.
    pub v: Vec<Vec<f64>>,
    /// Number of updates each parameter has received.
    pub t: Vec<u64>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let m = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        let v = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m,
            v,
            t: vec![0; params.len()],
        }
    }

    /// Applies one update to every parameter that currently holds a
    /// gradient. Parameters with `grad == None` are skipped entirely —
    /// weights, moments, and step count all stay untouched.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<(), TensorError> {
        debug_assert_eq!(self.t.len(), params.len());
        for idx in 0..params.len() {
            let tensor = params.tensor_mut(idx);
            let Some(grad) = tensor.grad.take() else {
                continue;
            };
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(TensorError::NonFinite { op: "adam_step" });
            }
            self.t[idx] += 1;
            let t = self.t[idx] as i32;
            let bc1 = 1.0 - self.beta1.powi(t);
            let bc2 = 1.0 - self.beta2.powi(t);
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let data = tensor.data_mut();
            for ((w, g), (mi, vi)) in data.iter_mut().zip(&grad).zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Scales all present gradients so their global L2 norm is at most
/// `max_norm`; returns the pre-clip norm. Parameters without a gradient do
/// not participate.
pub fn clip_gradients(params: &mut ParamSet, max_norm: f64) -> f64 {
    let mut sq_sum = 0.0;
    for (_, tensor) in params.iter() {
        if let Some(grad) = &tensor.grad {
            sq_sum += grad.iter().map(|g| g * g).sum::<f64>();
        }
    }
    let norm = sq_sum.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for idx in 0..params.len() {
            if let Some(grad) = &mut params.tensor_mut(idx).grad {
                for g in grad.iter_mut() {
                    *g *= scale;
                }
            }
        }
    }
    norm
}
