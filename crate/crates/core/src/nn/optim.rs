//! AdamW with decoupled weight decay and a linear learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::{Grads, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    Constant,
    /// Linear warmup over `warmup` steps, then linear decay to zero at `total`.
    Linear { warmup: usize, total: usize },
}

impl Schedule {
    pub fn factor(&self, step: usize) -> f64 {
        match *self {
            Schedule::Constant => 1.0,
            Schedule::Linear { warmup, total } => {
                if step < warmup {
                    (step + 1) as f64 / warmup as f64
                } else if total <= warmup {
                    1.0
                } else {
                    ((total - step) as f64 / (total - warmup) as f64).max(0.0)
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    decay: Vec<bool>,
    t: usize,
}

impl AdamW {
    pub fn new(params: &ParamSet, lr: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps,
            weight_decay,
            m: params.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect(),
            v: params.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect(),
            decay: params
                .iter()
                .map(|(_, n, _)| !(n.ends_with("bias") || n.contains("LayerNorm")))
                .collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.t
    }

    /// One update with learning rate `lr * factor`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Grads, factor: f64) {
        self.t += 1;
        let lr = self.lr * factor;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let id = super::ParamId(i);
            let g = grads.raw(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let wd = if self.decay[i] { self.weight_decay } else { 0.0 };
            for (k, w) in params.tensor_mut(id).data.iter_mut().enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                *w -= lr * (mhat / (vhat.sqrt() + self.eps) + wd * *w);
            }
        }
    }
}
