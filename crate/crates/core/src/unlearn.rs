//! Forget-MI unlearning.
//!
//! Starting from a copy of the original model, each step pairs a forget
//! batch with an equally sized retain batch and minimizes
//!
//! ```text
//! total = w_uu·L_UU + w_ur·L_UR + w_mu·L_MU + w_mr·L_MR
//!
//! L_UU = −mean ‖[ul.img(f), ul.txt(f)] − [og.img(f̃), og.txt(f̃)]‖
//! L_MU = −mean ‖ul.joint(f) − og.joint(f̃)‖
//! L_UR = +mean ‖[ul.img(r), ul.txt(r)] − [og.img(r), og.txt(r)]‖
//! L_MR = +mean ‖ul.joint(r) − og.joint(r)‖
//! ```
//!
//! where `f̃` is a freshly perturbed copy of the forget batch. The two
//! unlearning terms push the unlearned model's unimodal and joint
//! embeddings of forget samples away from the original model's embeddings
//! of a noisy neighbourhood of them; the retention terms pin retain-sample
//! embeddings to the original. Only the unlearned model receives updates.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::model::{forward_on_tape, BundleVars, Model, ModelParams, ParamVars};
use crate::optim::{clip_global_norm, AdamState};
use crate::perturb::{perturb_forget_batch, NoiseConfig};
use crate::seed::derived_rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub w_uu: f64,
    pub w_ur: f64,
    pub w_mu: f64,
    pub w_mr: f64,
}

impl LossWeights {
    pub fn new(w_uu: f64, w_ur: f64, w_mu: f64, w_mr: f64) -> Result<Self> {
        let w = Self { w_uu, w_ur, w_mu, w_mr };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.w_uu, self.w_ur, self.w_mu, self.w_mr];
        if all.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::validation(format!("loss weights must be non-negative: {all:?}")));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!("loss weights sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        WeightPreset::Equal.weights()
    }
}

/// Named weight settings. "Higher" weights are 0.35 and "lower" 0.15.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightPreset {
    Equal,
    Multimodal,
    Unimodal,
    Retention,
}

impl WeightPreset {
    pub const ALL: [WeightPreset; 4] = [
        WeightPreset::Equal,
        WeightPreset::Multimodal,
        WeightPreset::Unimodal,
        WeightPreset::Retention,
    ];

    pub fn weights(self) -> LossWeights {
        let (w_uu, w_ur, w_mu, w_mr) = match self {
            WeightPreset::Equal => (0.25, 0.25, 0.25, 0.25),
            WeightPreset::Multimodal => (0.15, 0.15, 0.35, 0.35),
            WeightPreset::Unimodal => (0.35, 0.35, 0.15, 0.15),
            WeightPreset::Retention => (0.15, 0.35, 0.15, 0.35),
        };
        LossWeights { w_uu, w_ur, w_mu, w_mr }
    }

    pub fn name(self) -> &'static str {
        match self {
            WeightPreset::Equal => "equal",
            WeightPreset::Multimodal => "multimodal",
            WeightPreset::Unimodal => "unimodal",
            WeightPreset::Retention => "retention",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnlearnConfig {
    pub epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub noise: NoiseConfig,
    pub weights: LossWeights,
    pub clip_norm: f32,
    pub seed: u64,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 1e-4,
            batch_size: 16,
            noise: NoiseConfig::default(),
            weights: LossWeights::default(),
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl UnlearnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::validation("unlearn.epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("unlearn.batch_size must be >= 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::validation("unlearn.lr must be positive"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::validation("unlearn.clip_norm must be positive"));
        }
        self.noise.validate()?;
        self.weights.validate()
    }
}

/// Handles of the four loss terms on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub uu: Var,
    pub ur: Var,
    pub mu: Var,
    pub mr: Var,
}

fn mean_distance(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d = tape.euclidean_distance(a, b)?;
    tape.mean(d, None)
}

fn unimodal_concat(tape: &mut Tape, b: &BundleVars) -> Result<Var> {
    tape.concat(b.img, b.txt)
}

fn check_rows(tape: &Tape, a: &BundleVars, b: &BundleVars) -> Result<()> {
    let (ra, rb) = (tape.shape(a.img)[0], tape.shape(b.img)[0]);
    if ra != rb || ra == 0 {
        return Err(Error::contract(format!("paired batches have {ra} and {rb} rows")));
    }
    Ok(())
}

/// `−mean Dist([ul.img, ul.txt](forget), [og.img, og.txt](noisy forget))`.
pub fn loss_uu_on_tape(tape: &mut Tape, ul_forget: &BundleVars, og_noisy: &BundleVars) -> Result<Var> {
    check_rows(tape, ul_forget, og_noisy)?;
    let a = unimodal_concat(tape, ul_forget)?;
    let b = unimodal_concat(tape, og_noisy)?;
    let d = mean_distance(tape, a, b)?;
    Ok(tape.neg(d))
}

/// `−mean Dist(ul.joint(forget), og.joint(noisy forget))`.
pub fn loss_mu_on_tape(tape: &mut Tape, ul_forget: &BundleVars, og_noisy: &BundleVars) -> Result<Var> {
    check_rows(tape, ul_forget, og_noisy)?;
    let d = mean_distance(tape, ul_forget.joint, og_noisy.joint)?;
    Ok(tape.neg(d))
}

/// `+mean Dist([ul.img, ul.txt](retain), [og.img, og.txt](retain))`.
pub fn loss_ur_on_tape(tape: &mut Tape, ul_retain: &BundleVars, og_retain: &BundleVars) -> Result<Var> {
    check_rows(tape, ul_retain, og_retain)?;
    let a = unimodal_concat(tape, ul_retain)?;
    let b = unimodal_concat(tape, og_retain)?;
    mean_distance(tape, a, b)
}

/// `+mean Dist(ul.joint(retain), og.joint(retain))`.
pub fn loss_mr_on_tape(tape: &mut Tape, ul_retain: &BundleVars, og_retain: &BundleVars) -> Result<Var> {
    check_rows(tape, ul_retain, og_retain)?;
    mean_distance(tape, ul_retain.joint, og_retain.joint)
}

/// Weighted sum of the four terms.
pub fn total_loss_on_tape(tape: &mut Tape, weights: &LossWeights, terms: &LossTerms) -> Result<Var> {
    weights.validate()?;
    let parts = [
        (terms.uu, weights.w_uu),
        (terms.ur, weights.w_ur),
        (terms.mu, weights.w_mu),
        (terms.mr, weights.w_mr),
    ];
    let mut acc = tape.scale(parts[0].0, parts[0].1 as f32);
    for &(v, w) in &parts[1..] {
        let s = tape.scale(v, w as f32);
        acc = tape.add(acc, s)?;
    }
    Ok(acc)
}

/// Scalar form of [`total_loss_on_tape`].
pub fn total_loss(weights: &LossWeights, l_uu: f64, l_ur: f64, l_mu: f64, l_mr: f64) -> Result<f64> {
    weights.validate()?;
    Ok(weights.w_uu * l_uu + weights.w_ur * l_ur + weights.w_mu * l_mu + weights.w_mr * l_mr)
}

/// Values of the four terms for concrete batches. `noisy` must be the
/// perturbed counterpart of `forget`, sample for sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValues {
    pub uu: f32,
    pub ur: f32,
    pub mu: f32,
    pub mr: f32,
}

fn check_pairing(forget: &[&Sample], noisy: &[&Sample]) -> Result<()> {
    if forget.len() != noisy.len() || forget.is_empty() {
        return Err(Error::contract(format!(
            "forget batch has {} samples, noisy batch {}",
            forget.len(),
            noisy.len()
        )));
    }
    if forget.iter().zip(noisy).any(|(a, b)| a.id() != b.id()) {
        return Err(Error::contract("noisy batch is not aligned with the forget batch"));
    }
    Ok(())
}

/// Evaluates all four losses without updating anything.
pub fn loss_values(
    ul: &Model,
    og: &Model,
    forget: &[&Sample],
    noisy: &[&Sample],
    retain: &[&Sample],
) -> Result<LossValues> {
    check_pairing(forget, noisy)?;
    let mut tape = Tape::new();
    let pu = ul.params.register(&mut tape, false);
    let po = og.params.register(&mut tape, false);
    let terms = build_terms(&mut tape, ul, &pu, &po, forget, noisy, retain)?;
    Ok(LossValues {
        uu: tape.value(terms.uu).item(),
        ur: tape.value(terms.ur).item(),
        mu: tape.value(terms.mu).item(),
        mr: tape.value(terms.mr).item(),
    })
}

fn build_terms(
    tape: &mut Tape,
    model: &Model,
    ul: &ParamVars,
    og: &ParamVars,
    forget: &[&Sample],
    noisy: &[&Sample],
    retain: &[&Sample],
) -> Result<LossTerms> {
    let fb = model.batch(forget.iter().copied())?;
    let nb = model.batch(noisy.iter().copied())?;
    let rb = model.batch(retain.iter().copied())?;
    let ul_f = forward_on_tape(tape, ul, &fb)?;
    let og_n = forward_on_tape(tape, og, &nb)?;
    let ul_r = forward_on_tape(tape, ul, &rb)?;
    let og_r = forward_on_tape(tape, og, &rb)?;
    Ok(LossTerms {
        uu: loss_uu_on_tape(tape, &ul_f, &og_n)?,
        mu: loss_mu_on_tape(tape, &ul_f, &og_n)?,
        ur: loss_ur_on_tape(tape, &ul_r, &og_r)?,
        mr: loss_mr_on_tape(tape, &ul_r, &og_r)?,
    })
}

/// Cyclic walk over the retain list in stable order.
#[derive(Clone, Debug)]
pub struct RetainBatches<'a, T> {
    items: &'a [T],
    cursor: usize,
    batch_size: usize,
}

pub fn retain_batch_iterator<T>(items: &[T], batch_size: usize) -> Result<RetainBatches<'_, T>> {
    if items.is_empty() {
        return Err(Error::validation("retain set is empty"));
    }
    if batch_size == 0 {
        return Err(Error::validation("retain batch size must be positive"));
    }
    Ok(RetainBatches {
        items,
        cursor: 0,
        batch_size,
    })
}

impl<T: Clone> RetainBatches<'_, T> {
    /// Next `n` items, wrapping around the end of the list.
    pub fn take_batch(&mut self, n: usize) -> Vec<T> {
        let out = (0..n)
            .map(|k| self.items[(self.cursor + k) % self.items.len()].clone())
            .collect();
        self.cursor = (self.cursor + n) % self.items.len();
        out
    }
}

impl<T: Clone> Iterator for RetainBatches<'_, T> {
    type Item = Vec<T>;

    fn next(&mut self) -> Option<Vec<T>> {
        Some(self.take_batch(self.batch_size))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTraceRow {
    pub epoch: usize,
    pub l_uu: f64,
    pub l_ur: f64,
    pub l_mu: f64,
    pub l_mr: f64,
    pub total: f64,
}

pub fn trace_to_csv(trace: &[LossTraceRow]) -> String {
    let mut out = String::from("epoch,l_uu,l_ur,l_mu,l_mr,total\n");
    for r in trace {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch, r.l_uu, r.l_ur, r.l_mu, r.l_mr, r.total
        );
    }
    out
}

/// Runs Forget-MI from `original`, returning the unlearned model and the
/// per-epoch mean of each loss term (weighted by batch size).
pub fn unlearn_run(
    original: &Model,
    forget: &[&Sample],
    retain: &[&Sample],
    config: &UnlearnConfig,
) -> Result<(Model, Vec<LossTraceRow>)> {
    config.validate()?;
    if forget.is_empty() {
        return Err(Error::validation("forget set is empty"));
    }
    let mut retain_batches = retain_batch_iterator(retain, config.batch_size)?;
    let mut unlearned = original.clone();
    let names = ModelParams::names();
    let mut adam = AdamState::new(unlearned.params.tensors(), config.lr);
    let vocabulary = original.tokenizer.known_words().to_vec();

    let mut order: Vec<usize> = (0..forget.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.sort_unstable();
        order.shuffle(&mut derived_rng(config.seed, &["forget-order".into(), epoch.into()]));
        let mut sums = [0.0f64; 5];
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let forget_batch: Vec<Sample> = chunk.iter().map(|&i| forget[i].clone()).collect();
            let noisy = perturb_forget_batch(&forget_batch, &config.noise, &vocabulary, epoch, config.seed)?;
            let retain_batch = retain_batches.take_batch(chunk.len());

            let mut tape = Tape::new();
            let po = original.params.register(&mut tape, false);
            let pu = unlearned.params.register(&mut tape, true);
            let f_refs: Vec<&Sample> = forget_batch.iter().collect();
            let n_refs: Vec<&Sample> = noisy.iter().collect();
            let terms = build_terms(&mut tape, &unlearned, &pu, &po, &f_refs, &n_refs, &retain_batch)?;
            let total = total_loss_on_tape(&mut tape, &config.weights, &terms)?;

            let values = [terms.uu, terms.ur, terms.mu, terms.mr, total].map(|v| tape.value(v).item());
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!(
                    "non-finite unlearning loss at epoch {epoch}, batch {step}"
                )));
            }
            for (s, v) in sums.iter_mut().zip(values) {
                *s += f64::from(v) * chunk.len() as f64;
            }

            tape.backward(total)?;
            let mut grads: Vec<Vec<f32>> = pu
                .all()
                .iter()
                .map(|&v| tape.take_grad(v).unwrap_or_default())
                .collect();
            clip_global_norm(&mut grads, config.clip_norm);
            adam.step(unlearned.params.tensors_mut(), &grads, &names)?;
        }
        let n = forget.len() as f64;
        trace.push(LossTraceRow {
            epoch,
            l_uu: sums[0] / n,
            l_ur: sums[1] / n,
            l_mu: sums[2] / n,
            l_mr: sums[3] / n,
            total: sums[4] / n,
        });
    }
    Ok((unlearned, trace))
}
