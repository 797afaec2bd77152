//! Supervised cross-entropy training with Adam.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{forward_on_tape, Model, ModelParams};
use crate::autodiff::Tape;
use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::optim::AdamState;
use crate::seed::derived_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Epoch cap.
    pub epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
    /// Stop once training accuracy reaches this value (checked after each epoch).
    pub target_accuracy: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 1e-3,
            batch_size: 32,
            target_accuracy: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::validation("train.batch_size must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::validation("train.lr must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainEpoch {
    pub epoch: usize,
    pub loss: f32,
    pub accuracy: f64,
}

/// Trains `initial` on `samples`; returns the trained model and a per-epoch trace.
pub fn train_original(initial: &Model, samples: &[Sample], config: &TrainConfig) -> Result<(Model, Vec<TrainEpoch>)> {
    let refs: Vec<&Sample> = samples.iter().collect();
    let mut model = initial.clone();
    let trace = fit(&mut model, &refs, config, None)?;
    Ok((model, trace))
}

pub fn batch_accuracy(model: &Model, samples: &[&Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let preds = model.predict(samples)?;
    let correct = preds.iter().zip(samples).filter(|(p, s)| **p == s.label).count();
    Ok(correct as f64 / samples.len() as f64)
}

/// Mini-batch cross-entropy training. Parameters flagged in `frozen` keep
/// their values bit-for-bit.
pub(crate) fn fit(
    model: &mut Model,
    samples: &[&Sample],
    config: &TrainConfig,
    frozen: Option<Vec<bool>>,
) -> Result<Vec<TrainEpoch>> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    let names = ModelParams::names();
    let mut adam = AdamState::new(model.params.tensors(), config.lr);
    if let Some(mask) = frozen {
        adam = adam.with_frozen(mask);
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut trace = Vec::new();
    for epoch in 1..=config.epochs {
        order.sort_unstable();
        order.shuffle(&mut derived_rng(config.seed, &["train-order".into(), epoch.into()]));
        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(config.batch_size) {
            let batch = model.batch(chunk.iter().map(|&i| samples[i]))?;
            let mut tape = Tape::new();
            let p = model.params.register(&mut tape, true);
            let out = forward_on_tape(&mut tape, &p, &batch)?;
            let (loss, _) = tape.softmax_cross_entropy(out.logits, &batch.labels)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::numeric(format!("non-finite training loss at epoch {epoch}")));
            }
            loss_sum += f64::from(value) * chunk.len() as f64;
            tape.backward(loss)?;
            let grads: Vec<Vec<f32>> = p.all().iter().map(|&v| tape.take_grad(v).unwrap_or_default()).collect();
            adam.step(model.params.tensors_mut(), &grads, &names)?;
        }
        let accuracy = batch_accuracy(model, samples)?;
        trace.push(TrainEpoch {
            epoch,
            loss: (loss_sum / samples.len() as f64) as f32,
            accuracy,
        });
        log::debug!(
            "epoch {epoch}: loss {:.4} acc {accuracy:.4}",
            loss_sum / samples.len() as f64
        );
        if config.target_accuracy.is_some_and(|t| accuracy >= t) {
            break;
        }
    }
    Ok(trace)
}
