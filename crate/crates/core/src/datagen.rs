//! Synthetic multimodal patient studies and patient-level forget splits.
//!
//! Each patient owns a latent signature and a pair of rare text tokens, and
//! contributes one or more studies. A study pairs a 16×16 image (class
//! prototype + patient signature pattern + pixel noise) with a short report
//! (class-indicative words, the patient's rare tokens, filler words) and an
//! edema stage in `0..4`. The class signal is deliberately weak relative to
//! the patient-specific signal, so a model fitted to the training patients
//! memorizes them and a membership-inference attack can tell them apart from
//! unseen patients.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::derived_rng;

pub const IMAGE_SIDE: usize = 16;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const NUM_CLASSES: usize = 4;
pub const SIGNATURE_DIM: usize = 8;
pub const MIN_WORDS: usize = 8;
pub const MAX_WORDS: usize = 24;
pub const MAX_STUDIES: usize = 8;

pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "no edema",
    "vascular congestion",
    "interstitial edema",
    "alveolar edema",
];

/// Parameters of the synthetic generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_patients: usize,
    /// Probability of a patient having `i + 1` studies.
    pub study_count_probs: Vec<f64>,
    /// Number of common (non patient-specific) words.
    pub vocab_size: usize,
    pub class_prior: [f64; NUM_CLASSES],
    /// Standard deviation of i.i.d. pixel noise.
    pub image_noise: f32,
    /// Amplitude of the class prototype pattern.
    pub class_signal: f32,
    /// Amplitude of the patient signature pattern.
    pub patient_signal: f32,
    /// Probability that a study repeats its patient's baseline stage.
    pub label_persistence: f64,
    /// Probability that a class-indicative word matches the true stage.
    pub class_word_fidelity: f64,
    pub rare_tokens_per_patient: usize,
    /// Fraction of patients assigned to the training split.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_patients: 600,
            study_count_probs: vec![0.20, 0.17, 0.14, 0.12, 0.11, 0.10, 0.08, 0.08],
            vocab_size: 120,
            class_prior: [0.43, 0.25, 0.22, 0.10],
            image_noise: 0.15,
            class_signal: 0.012,
            patient_signal: 0.03,
            label_persistence: 1.0,
            class_word_fidelity: 0.25,
            rare_tokens_per_patient: 2,
            train_fraction: 0.85,
            seed: 0,
        }
    }
}

const CLASS_WORDS_PER_CLASS: usize = 6;

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::validation("data.n_patients must be positive"));
        }
        if self.vocab_size == 0 {
            return Err(Error::validation("data.vocab_size must be positive"));
        }
        if self.vocab_size < NUM_CLASSES * CLASS_WORDS_PER_CLASS + 1 {
            return Err(Error::validation(format!(
                "data.vocab_size must be at least {} (class words plus filler)",
                NUM_CLASSES * CLASS_WORDS_PER_CLASS + 1
            )));
        }
        check_distribution("data.study_count_probs", &self.study_count_probs)?;
        if self.study_count_probs.len() > MAX_STUDIES {
            return Err(Error::validation(format!(
                "data.study_count_probs supports at most {MAX_STUDIES} entries"
            )));
        }
        check_distribution("data.class_prior", &self.class_prior)?;
        for (name, v) in [
            ("data.label_persistence", self.label_persistence),
            ("data.class_word_fidelity", self.class_word_fidelity),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::validation(format!("{name} must be in [0, 1]")));
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::validation("data.train_fraction must be in (0, 1)"));
        }
        if self.rare_tokens_per_patient > MIN_WORDS - 4 {
            return Err(Error::validation(format!(
                "data.rare_tokens_per_patient must be at most {}",
                MIN_WORDS - 4
            )));
        }
        if self.image_noise < 0.0 || self.class_signal < 0.0 || self.patient_signal < 0.0 {
            return Err(Error::validation("data signal/noise amplitudes must be non-negative"));
        }
        Ok(())
    }
}

fn check_distribution(name: &str, probs: &[f64]) -> Result<()> {
    if probs.is_empty() || probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::validation(format!("{name} must be probabilities in [0, 1]")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::validation(format!("{name} sums to {sum}, expected 1")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientProfile {
    pub patient_id: u32,
    pub signature: Vec<f32>,
    pub study_count: usize,
    pub baseline_label: usize,
    pub rare_tokens: Vec<String>,
}

/// One patient study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub patient_id: u32,
    pub study_id: u32,
    pub label: usize,
    pub text: String,
    pub image: Vec<f32>,
}

impl Sample {
    pub fn id(&self) -> SampleId {
        SampleId {
            patient_id: self.patient_id,
            study_id: self.study_id,
        }
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.text.split_whitespace()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SampleId {
    pub patient_id: u32,
    pub study_id: u32,
}

/// Output of [`generate`].
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub profiles: Vec<PatientProfile>,
    /// Common generator words (class words first, then filler).
    pub vocabulary: Vec<String>,
}

/// Deterministic pseudo-words drawn from a syllable alphabet. None of them
/// start with `zx`, the rare-token prefix.
fn make_vocabulary(size: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    const ONSETS: [&str; 16] = [
        "b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w",
    ];
    const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        let syllables = rng.random_range(2..=3);
        let word: String = (0..syllables)
            .map(|_| {
                let o = ONSETS[rng.random_range(0..ONSETS.len())];
                let v = VOWELS[rng.random_range(0..VOWELS.len())];
                format!("{o}{v}")
            })
            .collect();
        if seen.insert(word.clone()) {
            out.push(word);
        }
    }
    out
}

fn rare_token(index: usize) -> String {
    let mut n = index;
    let mut letters = Vec::new();
    loop {
        letters.push((b'a' + (n % 26) as u8) as char);
        n /= 26;
        if n == 0 {
            break;
        }
    }
    letters.reverse();
    format!("zx{}", letters.into_iter().collect::<String>())
}

fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn normal_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Largest-remainder apportionment of `total` items over `weights`
/// (ties go to the lower index).
pub(crate) fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut left = total - alloc.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for i in order {
        if left == 0 {
            break;
        }
        alloc[i] += 1;
        left -= 1;
    }
    alloc
}

pub fn generate(config: &DataConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = derived_rng(config.seed, &["datagen".into()]);

    let vocabulary = make_vocabulary(config.vocab_size, &mut rng);
    let class_words: Vec<&[String]> = (0..NUM_CLASSES)
        .map(|c| &vocabulary[c * CLASS_WORDS_PER_CLASS..(c + 1) * CLASS_WORDS_PER_CLASS])
        .collect();
    let filler = &vocabulary[NUM_CLASSES * CLASS_WORDS_PER_CLASS..];

    let prototypes: Vec<Vec<f32>> = (0..NUM_CLASSES).map(|_| normal_vec(IMAGE_PIXELS, &mut rng)).collect();
    let basis: Vec<Vec<f32>> = (0..SIGNATURE_DIM)
        .map(|_| {
            normal_vec(IMAGE_PIXELS, &mut rng)
                .into_iter()
                .map(|v| v / (SIGNATURE_DIM as f32).sqrt())
                .collect()
        })
        .collect();

    // Baseline stages are apportioned exactly to the prior, then shuffled.
    let base_counts = largest_remainder(config.n_patients, &config.class_prior);
    let mut baselines: Vec<usize> = base_counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    baselines.shuffle(&mut rng);

    let mut profiles = Vec::with_capacity(config.n_patients);
    let mut samples = Vec::new();
    for (pid, &baseline) in baselines.iter().enumerate() {
        let study_count = sample_categorical(&config.study_count_probs, &mut rng) + 1;
        let signature = normal_vec(SIGNATURE_DIM, &mut rng);
        let rare_tokens: Vec<String> = (0..config.rare_tokens_per_patient)
            .map(|k| rare_token(pid * config.rare_tokens_per_patient + k))
            .collect();

        let mut pattern = vec![0.0f32; IMAGE_PIXELS];
        for (s, b) in signature.iter().zip(&basis) {
            for (p, v) in pattern.iter_mut().zip(b) {
                *p += s * v;
            }
        }

        for study in 0..study_count {
            let label = if rng.random_bool(config.label_persistence) {
                baseline
            } else {
                sample_categorical(&config.class_prior, &mut rng)
            };
            let image: Vec<f32> = (0..IMAGE_PIXELS)
                .map(|j| {
                    let noise: f32 = StandardNormal.sample(&mut rng);
                    let v = 0.5
                        + config.class_signal * prototypes[label][j]
                        + config.patient_signal * pattern[j]
                        + config.image_noise * noise;
                    v.clamp(0.0, 1.0)
                })
                .collect();

            let n_words = rng.random_range(MIN_WORDS..=MAX_WORDS);
            let n_class = rng.random_range(2..=4);
            let mut words: Vec<String> = Vec::with_capacity(n_words);
            for _ in 0..n_class {
                let c = if rng.random_bool(config.class_word_fidelity) {
                    label
                } else {
                    rng.random_range(0..NUM_CLASSES)
                };
                words.push(class_words[c][rng.random_range(0..CLASS_WORDS_PER_CLASS)].clone());
            }
            words.extend(rare_tokens.iter().cloned());
            while words.len() < n_words {
                words.push(filler[rng.random_range(0..filler.len())].clone());
            }
            words.shuffle(&mut rng);

            samples.push(Sample {
                patient_id: pid as u32,
                study_id: study as u32,
                label,
                text: words.join(" "),
                image,
            });
        }
        profiles.push(PatientProfile {
            patient_id: pid as u32,
            signature,
            study_count,
            baseline_label: baseline,
            rare_tokens,
        });
    }

    // Patient-level train/test split.
    let mut order: Vec<u32> = (0..config.n_patients as u32).collect();
    order.shuffle(&mut rng);
    let n_train = ((config.n_patients as f64) * config.train_fraction).round() as usize;
    let n_train = n_train.clamp(1, config.n_patients.saturating_sub(1).max(1));
    let train_ids: BTreeSet<u32> = order[..n_train].iter().copied().collect();
    let (train, test): (Vec<Sample>, Vec<Sample>) =
        samples.into_iter().partition(|s| train_ids.contains(&s.patient_id));

    Ok(Dataset {
        train,
        test,
        profiles,
        vocabulary,
    })
}

/// Per-class share of labels.
pub fn label_shares(samples: &[Sample]) -> [f64; NUM_CLASSES] {
    let mut counts = [0usize; NUM_CLASSES];
    for s in samples {
        counts[s.label] += 1;
    }
    let n = samples.len().max(1) as f64;
    counts.map(|c| c as f64 / n)
}

// ---- forget splits ------------------------------------------------------------

pub const STANDARD_FORGET_PCTS: [u32; 3] = [3, 6, 10];

/// Study-count buckets used to stratify forget-patient selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyBucket {
    /// Exactly one study.
    Single,
    /// Two or three studies.
    Few,
    /// Four or more studies.
    Many,
}

impl StudyBucket {
    pub const ALL: [StudyBucket; 3] = [StudyBucket::Single, StudyBucket::Few, StudyBucket::Many];

    pub fn of(study_count: usize) -> Self {
        match study_count {
            0 | 1 => StudyBucket::Single,
            2 | 3 => StudyBucket::Few,
            _ => StudyBucket::Many,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForgetSplit {
    pub pct: u32,
    pub forget_patient_ids: BTreeSet<u32>,
    pub forget_sample_ids: BTreeSet<SampleId>,
    /// Remaining training samples in dataset order.
    pub retain_sample_ids: Vec<SampleId>,
}

impl ForgetSplit {
    pub fn forget_fraction(&self) -> f64 {
        let total = self.forget_sample_ids.len() + self.retain_sample_ids.len();
        self.forget_sample_ids.len() as f64 / total.max(1) as f64
    }

    /// Partitions `samples` into (forget, retain), both in dataset order.
    pub fn partition<'a>(&self, samples: &'a [Sample]) -> (Vec<&'a Sample>, Vec<&'a Sample>) {
        samples.iter().partition(|s| self.forget_sample_ids.contains(&s.id()))
    }

    pub fn is_forgotten(&self, sample: &Sample) -> bool {
        self.forget_sample_ids.contains(&sample.id())
    }
}

/// Patient share per [`StudyBucket`] (indexed by bucket order).
pub fn bucket_shares<I: IntoIterator<Item = usize>>(study_counts: I) -> [f64; 3] {
    let mut counts = [0usize; 3];
    let mut n = 0usize;
    for c in study_counts {
        counts[StudyBucket::of(c).index()] += 1;
        n += 1;
    }
    counts.map(|c| c as f64 / n.max(1) as f64)
}

/// Per-patient study counts in `samples`, keyed by patient id.
pub fn study_counts(samples: &[Sample]) -> BTreeMap<u32, usize> {
    let mut out = BTreeMap::new();
    for s in samples {
        *out.entry(s.patient_id).or_insert(0) += 1;
    }
    out
}

/// Largest relative deviation of `shares` from `reference`, over buckets
/// present in the reference.
pub fn max_relative_share_error(shares: &[f64; 3], reference: &[f64; 3]) -> f64 {
    shares
        .iter()
        .zip(reference)
        .filter(|(_, r)| **r > 0.0)
        .map(|(s, r)| (s - r).abs() / r)
        .fold(0.0, f64::max)
}

struct Candidate {
    chosen: Vec<Vec<usize>>,
    size: usize,
}

/// Selects whole patients until the forget set holds `pct` percent of the
/// training samples, keeping the patients' study-count bucket shares close
/// to those of the full training set.
///
/// Patients inside each bucket are visited in a seeded shuffle of
/// ascending patient id. For every candidate patient count, bucket quotas
/// are rounded down or up (the largest-remainder rounding is one of the
/// options), the forget size is then tuned by swapping patients within a
/// bucket, and the candidate that fits the size tolerance with the smallest
/// share error wins.
pub fn split_forget(train: &[Sample], pct: u32, seed: u64) -> Result<ForgetSplit> {
    if pct == 0 || pct >= 100 {
        return Err(Error::validation(format!("forget pct must be in 1..100, got {pct}")));
    }
    if !STANDARD_FORGET_PCTS.contains(&pct) {
        log::warn!("forget pct {pct} is outside the standard set {STANDARD_FORGET_PCTS:?}");
    }
    if train.is_empty() {
        return Err(Error::validation("cannot split an empty training set"));
    }
    let counts = study_counts(train);
    let n = train.len();
    let target = (pct as f64 / 100.0 * n as f64).round().max(1.0) as usize;
    let tolerance = 0.005 * n as f64;

    let mut rng = derived_rng(seed, &["split".into(), u64::from(pct).into()]);
    let mut buckets: [Vec<(u32, usize)>; 3] = Default::default();
    for (&pid, &c) in &counts {
        buckets[StudyBucket::of(c).index()].push((pid, c));
    }
    for b in buckets.iter_mut() {
        b.shuffle(&mut rng);
    }
    let reference = bucket_shares(counts.values().copied());

    let mean = n as f64 / counts.len() as f64;
    let p0 = target as f64 / mean;
    let lo = ((p0 * 0.7).floor() as usize).max(1);
    let hi = ((p0 * 1.3).ceil() as usize + 1).min(counts.len());

    let mut best: Option<(bool, f64, usize, Candidate)> = None;
    for p in lo..=hi {
        for alloc in roundings(p, &reference, &buckets) {
            let cand = fill_and_tune(&buckets, &alloc, target);
            let shares = {
                let total: usize = alloc.iter().sum();
                let mut s = [0.0; 3];
                for (i, a) in alloc.iter().enumerate() {
                    s[i] = *a as f64 / total as f64;
                }
                s
            };
            let fits = (cand.size as f64 - target as f64).abs() <= tolerance + 1e-9;
            let err = max_relative_share_error(&shares, &reference);
            let gap = cand.size.abs_diff(target);
            let better = match &best {
                None => true,
                Some((bf, be, bg, _)) => {
                    (fits, std::cmp::Reverse(ordered(err)), std::cmp::Reverse(gap))
                        > (*bf, std::cmp::Reverse(ordered(*be)), std::cmp::Reverse(*bg))
                }
            };
            if better {
                best = Some((fits, err, gap, cand));
            }
        }
    }
    let (_, _, _, cand) = best.ok_or_else(|| Error::validation("no forget split candidate"))?;

    let forget_patient_ids: BTreeSet<u32> = cand
        .chosen
        .iter()
        .enumerate()
        .flat_map(|(b, idx)| idx.iter().map(move |&i| (b, i)))
        .map(|(b, i)| buckets[b][i].0)
        .collect();
    let mut forget_sample_ids = BTreeSet::new();
    let mut retain_sample_ids = Vec::new();
    for s in train {
        if forget_patient_ids.contains(&s.patient_id) {
            forget_sample_ids.insert(s.id());
        } else {
            retain_sample_ids.push(s.id());
        }
    }
    Ok(ForgetSplit {
        pct,
        forget_patient_ids,
        forget_sample_ids,
        retain_sample_ids,
    })
}

fn ordered(x: f64) -> u64 {
    // Non-negative finite floats order like their bit patterns.
    x.to_bits()
}

/// All floor/ceil roundings of the proportional quotas that sum to `p` and
/// fit the bucket sizes. The largest-remainder rounding is listed first.
fn roundings(p: usize, shares: &[f64; 3], buckets: &[Vec<(u32, usize)>; 3]) -> Vec<[usize; 3]> {
    let lr = largest_remainder(p, shares);
    let mut out = vec![[lr[0], lr[1], lr[2]]];
    let quotas: Vec<f64> = shares.iter().map(|s| s * p as f64).collect();
    for mask in 0u8..8 {
        let mut a = [0usize; 3];
        for i in 0..3 {
            a[i] = if mask & (1 << i) != 0 {
                quotas[i].ceil() as usize
            } else {
                quotas[i].floor() as usize
            };
        }
        if a.iter().sum::<usize>() == p && !out.contains(&a) {
            out.push(a);
        }
    }
    out.retain(|a| a.iter().zip(buckets).all(|(n, b)| *n <= b.len()));
    out
}

fn fill_and_tune(buckets: &[Vec<(u32, usize)>; 3], alloc: &[usize; 3], target: usize) -> Candidate {
    let mut chosen: Vec<Vec<usize>> = alloc.iter().map(|&a| (0..a).collect()).collect();
    let mut size: usize = chosen
        .iter()
        .enumerate()
        .map(|(b, idx)| idx.iter().map(|&i| buckets[b][i].1).sum::<usize>())
        .sum();
    // Greedy swaps inside a bucket until the size gap stops shrinking.
    loop {
        let gap = size.abs_diff(target);
        if gap == 0 {
            break;
        }
        let mut best: Option<(usize, usize, usize, usize)> = None;
        for (b, bucket) in buckets.iter().enumerate() {
            let in_set: BTreeSet<usize> = chosen[b].iter().copied().collect();
            for (slot, &i) in chosen[b].iter().enumerate() {
                for (j, cand) in bucket.iter().enumerate() {
                    if in_set.contains(&j) || cand.1 == bucket[i].1 {
                        continue;
                    }
                    let new_size = size - bucket[i].1 + cand.1;
                    let new_gap = new_size.abs_diff(target);
                    if new_gap < best.map_or(gap, |x| x.3) {
                        best = Some((b, slot, j, new_gap));
                    }
                }
            }
        }
        match best {
            Some((b, slot, j, _)) => {
                let i = chosen[b][slot];
                size = size - buckets[b][i].1 + buckets[b][j].1;
                chosen[b][slot] = j;
            }
            None => break,
        }
    }
    Candidate { chosen, size }
}

// ---- JSONL --------------------------------------------------------------------

pub fn save_jsonl(samples: &[Sample], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_jsonl(path: &Path) -> Result<Vec<Sample>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if sample.image.len() != IMAGE_PIXELS {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("image has {} values, expected {IMAGE_PIXELS}", sample.image.len()),
            });
        }
        out.push(sample);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(seed: u64) -> DataConfig {
        DataConfig {
            n_patients: 80,
            seed,
            ..DataConfig::default()
        }
    }

    #[test]
    fn rejects_degenerate_configs() {
        let mut c = small_config(1);
        c.n_patients = 0;
        assert!(matches!(generate(&c), Err(Error::Validation(_))));
        let mut c = small_config(1);
        c.vocab_size = 0;
        assert!(matches!(generate(&c), Err(Error::Validation(_))));
        let mut c = small_config(1);
        c.study_count_probs = vec![0.5, 0.4];
        assert!(generate(&c).is_err());
    }

    #[test]
    fn sample_invariants_hold() {
        let data = generate(&small_config(3)).unwrap();
        let vocab: BTreeSet<&str> = data.vocabulary.iter().map(String::as_str).collect();
        let rare: BTreeMap<u32, &Vec<String>> = data.profiles.iter().map(|p| (p.patient_id, &p.rare_tokens)).collect();
        for s in data.train.iter().chain(&data.test) {
            assert_eq!(s.image.len(), IMAGE_PIXELS);
            assert!(s.image.iter().all(|p| (0.0..=1.0).contains(p)));
            let n = s.words().count();
            assert!((MIN_WORDS..=MAX_WORDS).contains(&n), "{n} words");
            assert!(s.label < NUM_CLASSES);
            for w in s.words() {
                assert!(vocab.contains(w) || rare[&s.patient_id].iter().any(|r| r == w), "{w}");
                assert!(w.chars().all(|c| c.is_ascii_lowercase()));
            }
        }
    }

    #[test]
    fn point_mass_study_counts() {
        let mut c = small_config(5);
        c.study_count_probs = vec![1.0];
        let data = generate(&c).unwrap();
        assert!(data.profiles.iter().all(|p| p.study_count == 1));
        assert_eq!(data.train.len() + data.test.len(), c.n_patients);
    }

    #[test]
    fn train_and_test_patients_are_disjoint() {
        let data = generate(&small_config(9)).unwrap();
        let train: BTreeSet<u32> = data.train.iter().map(|s| s.patient_id).collect();
        assert!(data.test.iter().all(|s| !train.contains(&s.patient_id)));
        assert!(!data.test.is_empty());
    }

    #[test]
    fn rare_tokens_never_collide_with_vocabulary() {
        let data = generate(&small_config(2)).unwrap();
        assert!(data.vocabulary.iter().all(|w| !w.starts_with("zx")));
        assert_eq!(rare_token(0), "zxa");
        assert_eq!(rare_token(26), "zxba");
    }

    #[test]
    fn largest_remainder_sums_to_total() {
        assert_eq!(largest_remainder(10, &[0.43, 0.25, 0.22, 0.10]), vec![4, 3, 2, 1]);
        assert_eq!(largest_remainder(3, &[1.0, 1.0, 1.0]), vec![1, 1, 1]);
        assert_eq!(largest_remainder(1, &[1.0, 1.0]), vec![1, 0]);
    }

    #[test]
    fn split_rejects_out_of_range_pct() {
        let data = generate(&small_config(4)).unwrap();
        assert!(split_forget(&data.train, 100, 0).is_err());
        assert!(split_forget(&data.train, 0, 0).is_err());
        assert!(split_forget(&data.train, 5, 0).is_ok());
    }

    #[test]
    fn minimal_split_takes_one_single_study_patient() {
        let mut c = small_config(6);
        c.n_patients = 40;
        c.study_count_probs = vec![0.5, 0.5];
        let data = generate(&c).unwrap();
        // 3% of roughly 50 samples rounds to one sample.
        let train: Vec<Sample> = data.train.iter().take(40).cloned().collect();
        let split = split_forget(&train, 3, 1).unwrap();
        assert_eq!(split.forget_sample_ids.len(), 1);
        assert_eq!(split.forget_patient_ids.len(), 1);
        assert_eq!(split.retain_sample_ids.len(), train.len() - 1);
    }

    #[test]
    fn jsonl_error_paths() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.jsonl");
        File::create(&empty).unwrap();
        assert!(load_jsonl(&empty).unwrap().is_empty());

        let data = generate(&small_config(8)).unwrap();
        let path = dir.path().join("bad.jsonl");
        save_jsonl(&data.train[..3], &path).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.truncate(text.len() - 40);
        std::fs::write(&path, text).unwrap();
        match load_jsonl(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
