//! Adam with decoupled weight decay and a step learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::nn::{Grads, ParamStore, TensorKind};

/// Learning rate after multiplying `base` by `gamma` at every milestone
/// epoch already reached.
pub fn lr_at(base: f64, epoch: usize, milestones: &[usize], gamma: f64) -> f64 {
    milestones
        .iter()
        .filter(|&&m| epoch >= m)
        .fold(base, |lr, _| lr * gamma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    /// First and second moments, one slot per store tensor (empty for buffers).
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, weight_decay: f64) -> Self {
        let slots: Vec<Vec<f64>> = store
            .iter()
            .map(|(_, t)| if t.kind.trainable() { vec![0.0; t.data.len()] } else { Vec::new() })
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: slots.clone(),
            v: slots,
        }
    }

    pub fn check_matches(&self, store: &ParamStore) -> Result<()> {
        let ok = self.m.len() == store.len()
            && self.v.len() == store.len()
            && store.iter().zip(self.m.iter().zip(&self.v)).all(|((_, t), (m, v))| {
                let want = if t.kind.trainable() { t.data.len() } else { 0 };
                m.len() == want && v.len() == want
            });
        if ok {
            Ok(())
        } else {
            Err(GaitError::Checkpoint("optimizer state does not match the model".into()))
        }
    }

    /// One update. Decay shrinks `Weight` tensors directly (`p -= lr * wd * p`)
    /// and never touches batch-norm affine terms.
    pub fn update(&mut self, store: &mut ParamStore, grads: &Grads, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (i, tensor) in store.tensors_mut().enumerate() {
            if !tensor.kind.trainable() {
                continue;
            }
            let wd = if tensor.kind == TensorKind::Weight { self.weight_decay } else { 0.0 };
            let g = &grads.slots()[i];
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..tensor.data.len() {
                let gj = g[j];
                tensor.data[j] -= lr * wd * tensor.data[j];
                m[j] = b1 * m[j] + (1.0 - b1) * gj;
                v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                tensor.data[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
