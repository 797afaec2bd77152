//! Noisy counterparts of forget samples: additive Gaussian pixel noise and
//! random character/word corruption of report text.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::seed::derived_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub mu: f32,
    pub sigma: f32,
    /// Per-word probability of one character edit.
    pub char_rate: f64,
    /// Per-word probability of one word-level edit.
    pub word_rate: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            mu: 0.0,
            sigma: 0.1,
            char_rate: 0.1,
            word_rate: 0.1,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn none() -> Self {
        Self {
            mu: 0.0,
            sigma: 0.0,
            char_rate: 0.0,
            word_rate: 0.0,
            seed: 0,
        }
    }

    pub fn is_none(&self) -> bool {
        self.mu == 0.0 && self.sigma == 0.0 && self.char_rate == 0.0 && self.word_rate == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::validation(format!(
                "noise.sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        if !self.mu.is_finite() {
            return Err(Error::validation("noise.mu must be finite"));
        }
        for (name, r) in [("noise.char_rate", self.char_rate), ("noise.word_rate", self.word_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::validation(format!("{name} must be in [0, 1], got {r}")));
            }
        }
        Ok(())
    }
}

/// Adds `N(mu, sigma²)` to every pixel and clamps to `[0, 1]`.
pub fn gaussian_image_noise(image: &[f32], mu: f32, sigma: f32, rng: &mut ChaCha8Rng) -> Result<Vec<f32>> {
    if !(sigma >= 0.0) {
        return Err(Error::validation(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(image.iter().map(|p| (p + mu).clamp(0.0, 1.0)).collect());
    }
    let normal = Normal::new(mu, sigma).map_err(|e| Error::validation(e.to_string()))?;
    Ok(image.iter().map(|p| (p + normal.sample(rng)).clamp(0.0, 1.0)).collect())
}

const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

fn random_letter_except(rng: &mut ChaCha8Rng, avoid: Option<char>) -> char {
    loop {
        let c = ALPHABET[rng.random_range(0..ALPHABET.len())] as char;
        if Some(c) != avoid {
            return c;
        }
    }
}

/// One substitute/insert/delete edit. A one-letter word is never deleted
/// down to nothing; the edit falls back to substitution.
fn char_edit(word: &str, rng: &mut ChaCha8Rng) -> String {
    let mut chars: Vec<char> = word.chars().collect();
    let kind = rng.random_range(0..3u8);
    match kind {
        1 => {
            let at = rng.random_range(0..=chars.len());
            chars.insert(at, random_letter_except(rng, None));
        }
        2 if chars.len() > 1 => {
            let at = rng.random_range(0..chars.len());
            chars.remove(at);
        }
        _ => {
            if chars.is_empty() {
                chars.push(random_letter_except(rng, None));
            } else {
                let at = rng.random_range(0..chars.len());
                chars[at] = random_letter_except(rng, Some(chars[at]));
            }
        }
    }
    chars.into_iter().collect()
}

/// Corrupts a whitespace-separated text.
///
/// Each word independently receives a character edit with probability
/// `char_rate`, then a word edit with probability `word_rate`: deletion
/// (skipped for the last remaining word), a swap with its right neighbour,
/// or replacement by a uniformly drawn word of `vocabulary`.
pub fn text_noise(
    text: &str,
    char_rate: f64,
    word_rate: f64,
    vocabulary: &[String],
    rng: &mut ChaCha8Rng,
) -> Result<String> {
    let mut words: Vec<String> = text.split_whitespace().map(str::to_owned).collect();
    if words.is_empty() {
        return Err(Error::validation("text_noise on empty text"));
    }
    if !(0.0..=1.0).contains(&char_rate) || !(0.0..=1.0).contains(&word_rate) {
        return Err(Error::validation("text noise rates must be in [0, 1]"));
    }
    if char_rate == 0.0 && word_rate == 0.0 {
        return Ok(words.join(" "));
    }
    let mut i = 0;
    while i < words.len() {
        if rng.random_bool(char_rate) {
            words[i] = char_edit(&words[i], rng);
        }
        if rng.random_bool(word_rate) {
            match rng.random_range(0..3u8) {
                0 => {
                    if words.len() > 1 {
                        words.remove(i);
                        continue;
                    }
                }
                1 => {
                    if i + 1 < words.len() {
                        words.swap(i, i + 1);
                        i += 2;
                        continue;
                    }
                }
                _ => {
                    if !vocabulary.is_empty() {
                        words[i] = vocabulary[rng.random_range(0..vocabulary.len())].clone();
                    }
                }
            }
        }
        i += 1;
    }
    Ok(words.join(" "))
}

/// Noisy copy of a forget batch. The rng for each sample is keyed by
/// `(run_seed, config.seed, epoch, patient_id, study_id)`, so each epoch
/// draws fresh noise and reruns reproduce it exactly.
pub fn perturb_forget_batch(
    batch: &[Sample],
    config: &NoiseConfig,
    vocabulary: &[String],
    epoch: usize,
    run_seed: u64,
) -> Result<Vec<Sample>> {
    config.validate()?;
    if config.is_none() {
        return Ok(batch.to_vec());
    }
    batch
        .iter()
        .map(|s| {
            let mut rng = derived_rng(
                run_seed,
                &[
                    "perturb".into(),
                    config.seed.into(),
                    epoch.into(),
                    s.patient_id.into(),
                    s.study_id.into(),
                ],
            );
            let image = gaussian_image_noise(&s.image, config.mu, config.sigma, &mut rng)?;
            let text = text_noise(&s.text, config.char_rate, config.word_rate, vocabulary, &mut rng)?;
            Ok(Sample {
                image,
                text,
                ..s.clone()
            })
        })
        .collect()
}
