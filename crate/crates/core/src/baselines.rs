//! Comparison unlearners: exact retraining, NegGrad+, CF-k and EU-k.
//!
//! Layers are counted in the order image layer 1, image layer 2, text
//! encoder, fusion gate, head; "the first k layers" means a prefix of it.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::model::train::fit;
use crate::model::{forward_on_tape, Model, ModelParams, ParamId, TrainConfig, LAYER_COUNT};
use crate::optim::{clip_global_norm, AdamState};
use crate::seed::{derive_seed, derived_rng};
use crate::unlearn::retain_batch_iterator;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Retrain,
    NeggradPlus,
    CfK,
    EuK,
}

impl BaselineMethod {
    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::Retrain => "retrain",
            BaselineMethod::NeggradPlus => "neggrad_plus",
            BaselineMethod::CfK => "cf_k",
            BaselineMethod::EuK => "eu_k",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Number of leading layers frozen by CF-k and EU-k.
    pub k: usize,
    /// Weight of the negated forget cross-entropy in NegGrad+.
    pub gamma: f32,
    pub epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub clip_norm: f32,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            k: 2,
            gamma: 1.0,
            epochs: 10,
            lr: 1e-4,
            batch_size: 32,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k >= LAYER_COUNT {
            return Err(Error::validation(format!(
                "baseline.k = {} leaves nothing to train (model has {LAYER_COUNT} layers)",
                self.k
            )));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::validation("baseline.gamma must be >= 0"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::validation(
                "baseline.epochs and baseline.batch_size must be >= 1",
            ));
        }
        if !(self.lr > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::validation("baseline.lr and baseline.clip_norm must be positive"));
        }
        Ok(())
    }

    fn fine_tune(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            target_accuracy: None,
            seed: self.seed,
        }
    }
}

/// Exact unlearning: trains `initial` (an untrained model) on the retain
/// set with the original recipe.
pub fn retrain(initial: &Model, retain: &[&Sample], config: &TrainConfig) -> Result<Model> {
    let mut model = initial.clone();
    fit(&mut model, retain, config, None)?;
    Ok(model)
}

/// Fine-tunes a copy of `original` on `CE(retain) − γ·CE(forget)`, one
/// retain batch paired with one forget batch per step.
pub fn neggrad_plus(
    original: &Model,
    retain: &[&Sample],
    forget: &[&Sample],
    config: &BaselineConfig,
) -> Result<Model> {
    config.validate()?;
    if retain.is_empty() {
        return Err(Error::validation("retain set is empty"));
    }
    let mut forget_order: Vec<&Sample> = forget.to_vec();
    forget_order.shuffle(&mut derived_rng(config.seed, &["neggrad-forget".into()]));
    let mut forget_batches = retain_batch_iterator(&forget_order, config.batch_size)
        .map_err(|_| Error::validation("forget set is empty"))?;

    let mut model = original.clone();
    let names = ModelParams::names();
    let mut adam = AdamState::new(model.params.tensors(), config.lr);
    let mut order: Vec<usize> = (0..retain.len()).collect();
    for epoch in 1..=config.epochs {
        order.sort_unstable();
        order.shuffle(&mut derived_rng(config.seed, &["neggrad-order".into(), epoch.into()]));
        for chunk in order.chunks(config.batch_size) {
            let rb = model.batch(chunk.iter().map(|&i| retain[i]))?;
            let fb = model.batch(forget_batches.take_batch(chunk.len()))?;
            let mut tape = Tape::new();
            let p = model.params.register(&mut tape, true);
            let r_out = forward_on_tape(&mut tape, &p, &rb)?;
            let f_out = forward_on_tape(&mut tape, &p, &fb)?;
            let (r_ce, _) = tape.softmax_cross_entropy(r_out.logits, &rb.labels)?;
            let (f_ce, _) = tape.softmax_cross_entropy(f_out.logits, &fb.labels)?;
            let f_term = tape.scale(f_ce, -config.gamma);
            let loss = tape.add(r_ce, f_term)?;
            if !tape.value(loss).item().is_finite() {
                return Err(Error::numeric(format!("non-finite NegGrad+ loss at epoch {epoch}")));
            }
            tape.backward(loss)?;
            let mut grads: Vec<Vec<f32>> = p.all().iter().map(|&v| tape.take_grad(v).unwrap_or_default()).collect();
            clip_global_norm(&mut grads, config.clip_norm);
            adam.step(model.params.tensors_mut(), &grads, &names)?;
        }
    }
    Ok(model)
}

/// Adam mask freezing every parameter in the first `k` layers.
pub fn frozen_mask(k: usize) -> Vec<bool> {
    ParamId::ALL.iter().map(|id| id.layer() < k).collect()
}

/// Catastrophic forgetting: freezes the first `k` layers and fine-tunes the
/// rest on the retain set.
pub fn cf_k(original: &Model, retain: &[&Sample], config: &BaselineConfig) -> Result<Model> {
    config.validate()?;
    let mut model = original.clone();
    fit(&mut model, retain, &config.fine_tune(), Some(frozen_mask(config.k)))?;
    Ok(model)
}

/// Re-initializes every layer from `k` on (seeded) and trains those layers
/// on the retain set; the first `k` layers stay as in `original`.
pub fn eu_k(original: &Model, retain: &[&Sample], config: &BaselineConfig) -> Result<Model> {
    config.validate()?;
    let mut model = reinit_unfrozen(original, config.k, config.seed);
    fit(&mut model, retain, &config.fine_tune(), Some(frozen_mask(config.k)))?;
    Ok(model)
}

pub(crate) fn reinit_unfrozen(original: &Model, k: usize, seed: u64) -> Model {
    let mut model = original.clone();
    let init_seed = derive_seed(seed, &["eu-k-init".into()]);
    for id in ParamId::ALL {
        if id.layer() >= k {
            model.params.reinit(id, init_seed);
        }
    }
    model
}
