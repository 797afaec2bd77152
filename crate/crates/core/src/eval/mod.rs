//! Evaluation: classification metrics, membership inference, output-space
//! model distance and loss histograms.

mod metrics;
mod mia;

pub use metrics::{binary_auc, macro_auc, macro_f1};
pub use mia::{mia_score_from_losses, train_attack, MiaClassifier, MiaConfig};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::datagen::{Sample, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::model::{argmax, Model};

/// Per-sample softmax cross-entropy, in input order. Computed in `f64` so
/// that the small losses of memorized samples stay distinguishable.
pub fn per_sample_losses(model: &Model, samples: &[&Sample]) -> Result<Vec<f64>> {
    let logits = model.logits(samples)?;
    Ok(logits
        .iter()
        .zip(samples)
        .map(|(l, s)| {
            let l64 = l.map(f64::from);
            let max = l64.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = l64.iter().map(|x| (x - max).exp()).sum();
            (z.ln() - (l64[s.label] - max)).max(0.0)
        })
        .collect())
}

/// Membership-inference score of `model` on the forget set.
pub fn mia_score(
    model: &Model,
    retain: &[&Sample],
    test: &[&Sample],
    forget: &[&Sample],
    seed: u64,
) -> Result<(f64, MiaClassifier)> {
    if retain.is_empty() || test.is_empty() || forget.is_empty() {
        return Err(Error::validation(
            "mia_score needs non-empty retain, test and forget sets",
        ));
    }
    let r = per_sample_losses(model, retain)?;
    let t = per_sample_losses(model, test)?;
    let f = per_sample_losses(model, forget)?;
    mia_score_from_losses(&r, &t, &f, seed, &MiaConfig::default())
}

fn probabilities(model: &Model, samples: &[&Sample]) -> Result<Vec<[f64; NUM_CLASSES]>> {
    Ok(model
        .logits(samples)?
        .iter()
        .map(|l| {
            let l64 = l.map(f64::from);
            let max = l64.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut p = l64.map(|x| (x - max).exp());
            let z: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= z);
            p
        })
        .collect())
}

/// Mean Euclidean distance between the two models' softmax outputs.
pub fn model_distance(candidate: &Model, reference: &Model, samples: &[&Sample]) -> Result<f64> {
    if !candidate.params.same_architecture(&reference.params) {
        return Err(Error::contract("model_distance: architectures differ"));
    }
    if samples.is_empty() {
        return Err(Error::validation("model_distance on an empty sample set"));
    }
    let a = probabilities(candidate, samples)?;
    let b = probabilities(reference, samples)?;
    let total: f64 = a
        .iter()
        .zip(&b)
        .map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
        .sum();
    Ok(total / samples.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_low: f64,
    pub bin_high: f64,
    pub forget_count: usize,
    pub test_count: usize,
}

/// Forget vs test loss histogram over a shared binning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossHistogram {
    pub bins: Vec<HistogramBin>,
}

impl LossHistogram {
    /// Equal-width bins spanning the pooled range of both loss sets.
    pub fn from_losses(forget: &[f64], test: &[f64], n_bins: usize) -> Result<Self> {
        if forget.is_empty() || test.is_empty() {
            return Err(Error::validation("loss histogram needs non-empty forget and test sets"));
        }
        if n_bins == 0 {
            return Err(Error::validation("loss histogram needs at least one bin"));
        }
        let pooled = forget.iter().chain(test);
        let lo = pooled.clone().copied().fold(f64::INFINITY, f64::min);
        let hi = pooled.copied().fold(f64::NEG_INFINITY, f64::max);
        let width = (hi - lo) / n_bins as f64;
        let index = |x: f64| {
            if width <= 0.0 {
                0
            } else {
                (((x - lo) / width) as usize).min(n_bins - 1)
            }
        };
        let mut bins: Vec<HistogramBin> = (0..n_bins)
            .map(|i| HistogramBin {
                bin_low: lo + width * i as f64,
                bin_high: if i + 1 == n_bins {
                    hi
                } else {
                    lo + width * (i + 1) as f64
                },
                forget_count: 0,
                test_count: 0,
            })
            .collect();
        for &x in forget {
            bins[index(x)].forget_count += 1;
        }
        for &x in test {
            bins[index(x)].test_count += 1;
        }
        Ok(Self { bins })
    }

    pub fn forget_total(&self) -> usize {
        self.bins.iter().map(|b| b.forget_count).sum()
    }

    pub fn test_total(&self) -> usize {
        self.bins.iter().map(|b| b.test_count).sum()
    }

    /// Intersection of the two normalized histograms, in `[0, 1]`.
    pub fn overlap(&self) -> f64 {
        let (nf, nt) = (self.forget_total() as f64, self.test_total() as f64);
        self.bins
            .iter()
            .map(|b| (b.forget_count as f64 / nf).min(b.test_count as f64 / nt))
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_low,bin_high,forget_count,test_count\n");
        for b in &self.bins {
            let _ = writeln!(out, "{},{},{},{}", b.bin_low, b.bin_high, b.forget_count, b.test_count);
        }
        out
    }
}

pub fn loss_histogram(model: &Model, forget: &[&Sample], test: &[&Sample], n_bins: usize) -> Result<LossHistogram> {
    let f = per_sample_losses(model, forget)?;
    let t = per_sample_losses(model, test)?;
    LossHistogram::from_losses(&f, &t, n_bins)
}

/// Macro-F1 and macro-AUC of `model` on `samples`.
pub fn classification_scores(model: &Model, samples: &[&Sample]) -> Result<(f64, f64)> {
    let probs = probabilities(model, samples)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let preds: Vec<usize> = probs.iter().map(|p| argmax(&p.map(|v| v as f32))).collect();
    let f1 = macro_f1(&preds, &labels, NUM_CLASSES)?;
    let rows: Vec<Vec<f64>> = probs.iter().map(|p| p.to_vec()).collect();
    let auc = macro_auc(&rows, &labels, NUM_CLASSES)?;
    Ok((f1, auc))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub mia: f64,
    pub forget_auc: f64,
    pub forget_f1: f64,
    pub test_auc: f64,
    pub test_f1: f64,
    /// Distance to the reference model over retain ∪ test, when a reference was given.
    pub model_distance: Option<f64>,
    pub n_retain: usize,
    pub n_test: usize,
    pub n_forget: usize,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("mia", self.mia),
            ("forget_auc", self.forget_auc),
            ("forget_f1", self.forget_f1),
            ("test_auc", self.test_auc),
            ("test_f1", self.test_f1),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::validation(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        if self.model_distance.is_some_and(|d| !(d >= 0.0)) {
            return Err(Error::validation("model_distance must be >= 0"));
        }
        if self.n_retain == 0 || self.n_test == 0 || self.n_forget == 0 {
            return Err(Error::validation("sample counts must be positive"));
        }
        Ok(())
    }
}

/// Full metric battery for one model.
pub fn evaluate(
    model: &Model,
    retain: &[&Sample],
    test: &[&Sample],
    forget: &[&Sample],
    reference: Option<&Model>,
    seed: u64,
) -> Result<MetricsReport> {
    let (mia, _) = mia_score(model, retain, test, forget, seed)?;
    let (forget_f1, forget_auc) = classification_scores(model, forget)?;
    let (test_f1, test_auc) = classification_scores(model, test)?;
    let model_distance = match reference {
        Some(r) => {
            let pooled: Vec<&Sample> = retain.iter().chain(test).copied().collect();
            Some(model_distance(model, r, &pooled)?)
        }
        None => None,
    };
    Ok(MetricsReport {
        mia,
        forget_auc,
        forget_f1,
        test_auc,
        test_f1,
        model_distance,
        n_retain: retain.len(),
        n_test: test.len(),
        n_forget: forget.len(),
    })
}
