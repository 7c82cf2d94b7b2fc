use std::collections::BTreeMap;

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::restoration::{Gradients, StepWeights};

/// Adam with decoupled weight decay. Only tensors that receive a gradient
/// are touched, so a frozen tensor is never read-modified-written.
#[derive(Clone, Debug)]
pub struct AdamW {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<f32>, Vec<f32>)>,
}

impl AdamW {
    pub fn new(cfg: &TrainConfig) -> Self {
        AdamW {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn update(&mut self, weights: &mut StepWeights, grads: &Gradients) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let decay = (1.0 - self.lr * self.weight_decay) as f32;
        let step_size = (self.lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let eps = self.eps as f32;
        for (name, g) in grads {
            let p = weights
                .get_mut(name)
                .ok_or_else(|| Error::validation(format!("gradient for unknown tensor {name}")))?;
            if p.len() != g.len() {
                return Err(Error::validation(format!("gradient shape mismatch for {name}")));
            }
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; p.len()], vec![0.0; p.len()]));
            for (((w, &gi), mi), vi) in p.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                *w *= decay;
                *w -= step_size * *mi / (vi.sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(())
    }
}
