//! Black-box membership inference on per-sample losses.
//!
//! The attacker is a linear SVM over one scalar feature. Members (retain
//! losses) are the positive class and non-members (test losses) the
//! negative class. With a single feature a linear SVM is a threshold on the
//! loss, so the loss enters through its mid-rank position in the pooled
//! attack-training losses, centred on zero. That feature is a strictly
//! increasing function of the loss, which makes the attack invariant to any
//! strictly increasing transform applied to all losses at once.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::derived_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiaConfig {
    pub l2: f64,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for MiaConfig {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            epochs: 200,
            lr: 0.01,
        }
    }
}

/// Trained loss-threshold attacker.
#[derive(Clone, Debug, PartialEq)]
pub struct MiaClassifier {
    pub weight: f64,
    pub bias: f64,
    /// Sorted pooled training losses defining the feature map.
    reference: Vec<f64>,
}

impl MiaClassifier {
    /// Centred mid-rank of `loss` within the pooled training losses, in `[-0.5, 0.5]`.
    pub fn feature(&self, loss: f64) -> f64 {
        let below = self.reference.partition_point(|&r| r < loss);
        let upto = self.reference.partition_point(|&r| r <= loss);
        let ties = upto - below;
        (below as f64 + 0.5 * ties as f64) / self.reference.len() as f64 - 0.5
    }

    pub fn decision(&self, loss: f64) -> f64 {
        self.weight * self.feature(loss) + self.bias
    }

    /// Member iff the decision value is non-negative.
    ///
    /// Every loss strictly between the largest member and the smallest
    /// non-member training loss maps to the same feature value, so under
    /// perfect separation the whole gap sits on the boundary; it is counted
    /// as member.
    pub fn is_member(&self, loss: f64) -> bool {
        self.decision(loss) >= 0.0
    }
}

fn balanced(values: &[f64], n: usize, seed: u64, tag: &str) -> Vec<f64> {
    if values.len() == n {
        return values.to_vec();
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.shuffle(&mut derived_rng(seed, &["mia-balance".into(), tag.into()]));
    idx.truncate(n);
    idx.sort_unstable();
    idx.into_iter().map(|i| values[i]).collect()
}

/// Trains the attacker on `member_losses` (positives) and
/// `non_member_losses` (negatives) after balancing both to the smaller size.
pub fn train_attack(
    member_losses: &[f64],
    non_member_losses: &[f64],
    seed: u64,
    config: &MiaConfig,
) -> Result<MiaClassifier> {
    if member_losses.is_empty() || non_member_losses.is_empty() {
        return Err(Error::validation(
            "membership attack needs both member and non-member losses",
        ));
    }
    if member_losses.iter().chain(non_member_losses).any(|l| !l.is_finite()) {
        return Err(Error::numeric("non-finite loss fed to membership attack"));
    }
    let n = member_losses.len().min(non_member_losses.len());
    let pos = balanced(member_losses, n, seed, "member");
    let neg = balanced(non_member_losses, n, seed, "non-member");

    let mut reference: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    reference.sort_by(f64::total_cmp);
    let mut clf = MiaClassifier {
        weight: 0.0,
        bias: 0.0,
        reference,
    };
    let data: Vec<(f64, f64)> = pos
        .iter()
        .map(|&l| (clf.feature(l), 1.0))
        .chain(neg.iter().map(|&l| (clf.feature(l), -1.0)))
        .collect();
    let m = data.len() as f64;
    // Full-batch subgradient descent on mean hinge loss + l2·w².
    for _ in 0..config.epochs {
        // Label sums are integers, so a balanced active set leaves the bias exactly unchanged.
        let (mut sum_yx, mut sum_y) = (0.0, 0.0);
        for &(x, y) in &data {
            if y * (clf.weight * x + clf.bias) < 1.0 {
                sum_yx += y * x;
                sum_y += y;
            }
        }
        clf.weight -= config.lr * (2.0 * config.l2 * clf.weight - sum_yx / m);
        clf.bias -= config.lr * (-sum_y / m);
    }
    Ok(clf)
}

/// Fraction of `forget_losses` the attacker labels as members.
pub fn mia_score_from_losses(
    retain_losses: &[f64],
    test_losses: &[f64],
    forget_losses: &[f64],
    seed: u64,
    config: &MiaConfig,
) -> Result<(f64, MiaClassifier)> {
    if forget_losses.is_empty() {
        return Err(Error::validation("membership attack needs a non-empty forget set"));
    }
    let clf = train_attack(retain_losses, test_losses, seed, config)?;
    let members = forget_losses.iter().filter(|&&l| clf.is_member(l)).count();
    Ok((members as f64 / forget_losses.len() as f64, clf))
}
