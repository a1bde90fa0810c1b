//! Minibatch training loop shared by the encoder classifier and the reconstructors.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::optim::{AdamW, Schedule};
use super::{Grads, ParamSet};
use crate::par::{self, ExecutionMode};
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_epsilon: f64,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    pub max_grad_norm: Option<f64>,
    pub seed: u64,
    /// Examples per gradient shard; shards are summed in a fixed order so
    /// results do not depend on the thread count.
    pub shard_size: usize,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 2e-5,
            adam_epsilon: 1e-8,
            weight_decay: 0.0,
            warmup_ratio: 0.0,
            max_grad_norm: Some(1.0),
            seed: 42,
            shard_size: 8,
        }
    }
}

/// Mean loss per epoch.
pub type History = Vec<f64>;

/// Trains `params` by minimizing the mean of `loss_grad` over `examples`.
///
/// `loss_grad` returns one example's loss and accumulates its gradient.
pub fn fit<E, F>(params: &mut ParamSet, examples: &[E], spec: &TrainSpec, mode: ExecutionMode, loss_grad: F) -> History
where
    E: Sync,
    F: Fn(&ParamSet, &E, &mut Grads) -> f64 + Sync + Send,
{
    if examples.is_empty() || spec.epochs == 0 {
        return Vec::new();
    }
    let batch = spec.batch_size.max(1);
    let shard = spec.shard_size.max(1);
    let steps_per_epoch = examples.len().div_ceil(batch);
    let total = steps_per_epoch * spec.epochs;
    let schedule = Schedule::Linear {
        warmup: (spec.warmup_ratio * total as f64).round() as usize,
        total,
    };
    let mut opt = AdamW::new(params, spec.learning_rate, spec.adam_epsilon, spec.weight_decay);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = substream(spec.seed, "train-shuffle");
    let mut history = Vec::with_capacity(spec.epochs);
    for _ in 0..spec.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(batch) {
            let shards: Vec<&[usize]> = idx.chunks(shard).collect();
            let snapshot: &ParamSet = params;
            let parts = par::map(mode, &shards, |_, s| {
                let mut g = Grads::zeros_like(snapshot);
                let loss: f64 = s.iter().map(|&i| loss_grad(snapshot, &examples[i], &mut g)).sum();
                (loss, g)
            });
            let mut parts = parts.into_iter();
            let (mut loss, mut grads) = parts.next().expect("non-empty batch");
            for (l, g) in parts {
                loss += l;
                grads.add_assign(&g);
            }
            grads.scale(1.0 / idx.len() as f64);
            if let Some(max) = spec.max_grad_norm {
                let norm = grads.global_norm();
                if norm > max {
                    grads.scale(max / (norm + 1e-6));
                }
            }
            opt.step(params, &grads, schedule.factor(opt.steps()));
            epoch_loss += loss;
        }
        let mean = epoch_loss / examples.len() as f64;
        log::debug!("epoch loss {mean:.5}");
        history.push(mean);
    }
    history
}
