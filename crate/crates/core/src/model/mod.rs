//! The multimodal classifier.
//!
//! ```text
//! image [256] ─ affine 256→64 ─ relu ─ affine 64→32 ─ relu ─────────────┐ img_emb
//! text ─ token table V×16 ─ mean ─ affine 16→32 ─ relu ─────────────────┤ txt_emb
//!                                                                       ▼
//!        g     = relu(W_g·[img; txt] + b_g)
//!        shift = g ⊙ (W_t·txt + b_t)
//!        α     = β · min(1, ‖img‖ / (‖shift‖ + 1e-6))
//!        joint = img + α · shift                      ─ affine 32→4 ─ logits
//! ```
//!
//! The image embedding enters the joint embedding unscaled while the text
//! shift is bounded by `β·‖img‖`, so the visual modality dominates.

mod checkpoint;
mod tokenizer;
pub(crate) mod train;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use tokenizer::{Tokenizer, UNKNOWN_TOKEN};
pub use train::{batch_accuracy, train_original, TrainConfig, TrainEpoch};

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::datagen::{Sample, IMAGE_PIXELS, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::seed::derived_rng;
use crate::tensor::Tensor;

pub const IMAGE_HIDDEN: usize = 64;
pub const EMBED_DIM: usize = 32;
pub const TOKEN_DIM: usize = 16;
pub const DEFAULT_BETA: f32 = 0.5;
/// Added to `‖shift‖` in the gate scale.
pub const GATE_EPS: f32 = 1e-6;

/// Every learnable tensor, in checkpoint order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamId {
    ImageW1,
    ImageB1,
    ImageW2,
    ImageB2,
    TokenEmbedding,
    TextW,
    TextB,
    GateW,
    GateB,
    ShiftW,
    ShiftB,
    HeadW,
    HeadB,
}

/// Coarse layer order used for k-layer freezing.
pub const LAYER_NAMES: [&str; 5] = ["image_layer1", "image_layer2", "text_encoder", "fusion_gate", "head"];
pub const LAYER_COUNT: usize = LAYER_NAMES.len();

impl ParamId {
    pub const ALL: [ParamId; 13] = [
        ParamId::ImageW1,
        ParamId::ImageB1,
        ParamId::ImageW2,
        ParamId::ImageB2,
        ParamId::TokenEmbedding,
        ParamId::TextW,
        ParamId::TextB,
        ParamId::GateW,
        ParamId::GateB,
        ParamId::ShiftW,
        ParamId::ShiftB,
        ParamId::HeadW,
        ParamId::HeadB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamId::ImageW1 => "image.w1",
            ParamId::ImageB1 => "image.b1",
            ParamId::ImageW2 => "image.w2",
            ParamId::ImageB2 => "image.b2",
            ParamId::TokenEmbedding => "text.embedding",
            ParamId::TextW => "text.w",
            ParamId::TextB => "text.b",
            ParamId::GateW => "gate.w",
            ParamId::GateB => "gate.b",
            ParamId::ShiftW => "gate.shift_w",
            ParamId::ShiftB => "gate.shift_b",
            ParamId::HeadW => "head.w",
            ParamId::HeadB => "head.b",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    /// Index into [`LAYER_NAMES`].
    pub fn layer(self) -> usize {
        match self {
            ParamId::ImageW1 | ParamId::ImageB1 => 0,
            ParamId::ImageW2 | ParamId::ImageB2 => 1,
            ParamId::TokenEmbedding | ParamId::TextW | ParamId::TextB => 2,
            ParamId::GateW | ParamId::GateB | ParamId::ShiftW | ParamId::ShiftB => 3,
            ParamId::HeadW | ParamId::HeadB => 4,
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    fn shape(self, vocab: usize) -> Vec<usize> {
        match self {
            ParamId::ImageW1 => vec![IMAGE_PIXELS, IMAGE_HIDDEN],
            ParamId::ImageB1 => vec![IMAGE_HIDDEN],
            ParamId::ImageW2 => vec![IMAGE_HIDDEN, EMBED_DIM],
            ParamId::ImageB2 => vec![EMBED_DIM],
            ParamId::TokenEmbedding => vec![vocab, TOKEN_DIM],
            ParamId::TextW => vec![TOKEN_DIM, EMBED_DIM],
            ParamId::TextB => vec![EMBED_DIM],
            ParamId::GateW => vec![2 * EMBED_DIM, EMBED_DIM],
            ParamId::GateB => vec![EMBED_DIM],
            ParamId::ShiftW => vec![EMBED_DIM, EMBED_DIM],
            ParamId::ShiftB => vec![EMBED_DIM],
            ParamId::HeadW => vec![EMBED_DIM, NUM_CLASSES],
            ParamId::HeadB => vec![NUM_CLASSES],
        }
    }

    fn is_bias(self) -> bool {
        matches!(
            self,
            ParamId::ImageB1 | ParamId::ImageB2 | ParamId::TextB | ParamId::GateB | ParamId::ShiftB | ParamId::HeadB
        )
    }
}

/// All learnable tensors plus the gate scale `β`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    tensors: Vec<Tensor>,
    beta: f32,
}

impl ModelParams {
    /// Glorot-uniform weights (`s = sqrt(6 / (fan_in + fan_out))`), zero biases.
    pub fn init(vocab_size: usize, beta: f32, seed: u64) -> Self {
        let tensors = ParamId::ALL
            .iter()
            .map(|&id| init_tensor(id, vocab_size, seed))
            .collect();
        Self { tensors, beta }
    }

    /// Re-draws the tensors of `id` with the given seed.
    pub fn reinit(&mut self, id: ParamId, seed: u64) {
        self.tensors[id.index()] = init_tensor(id, self.vocab_size(), seed);
    }

    pub fn from_tensors(tensors: Vec<Tensor>, beta: f32) -> Result<Self> {
        if tensors.len() != ParamId::ALL.len() {
            return Err(Error::contract(format!(
                "expected {} parameter tensors, got {}",
                ParamId::ALL.len(),
                tensors.len()
            )));
        }
        let vocab = tensors[ParamId::TokenEmbedding.index()]
            .shape()
            .first()
            .copied()
            .unwrap_or(0);
        for (id, t) in ParamId::ALL.iter().zip(&tensors) {
            if t.shape() != id.shape(vocab).as_slice() {
                return Err(Error::shape("model params", t.shape(), &id.shape(vocab)));
            }
        }
        Ok(Self { tensors, beta })
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.index()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.index()]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names() -> Vec<&'static str> {
        ParamId::ALL.iter().map(|p| p.name()).collect()
    }

    pub fn beta(&self) -> f32 {
        self.beta
    }

    pub fn set_beta(&mut self, beta: f32) {
        self.beta = beta;
    }

    pub fn vocab_size(&self) -> usize {
        self.get(ParamId::TokenEmbedding).shape()[0]
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn bit_eq(&self, other: &ModelParams) -> bool {
        self.beta.to_bits() == other.beta.to_bits()
            && self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.bit_eq(b))
    }

    pub fn same_architecture(&self, other: &ModelParams) -> bool {
        self.tensors
            .iter()
            .zip(&other.tensors)
            .all(|(a, b)| a.shape() == b.shape())
    }

    /// Records every tensor on `tape`; tracked iff `trainable`.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.set_track_grad(trainable);
                tape.leaf(t)
            })
            .collect::<Vec<_>>();
        ParamVars {
            vars: vars.try_into().expect("13 params"),
            beta: self.beta,
        }
    }
}

fn init_tensor(id: ParamId, vocab: usize, seed: u64) -> Tensor {
    let shape = id.shape(vocab);
    if id.is_bias() {
        return Tensor::zeros(&shape);
    }
    let bound = (6.0 / (shape[0] + shape[1]) as f32).sqrt();
    let mut rng = derived_rng(seed, &["init".into(), id.name().into()]);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("init shape")
}

/// Parameter handles on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ParamVars {
    vars: [Var; 13],
    beta: f32,
}

impl ParamVars {
    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.index()]
    }

    pub fn all(&self) -> &[Var; 13] {
        &self.vars
    }
}

/// Embedding handles produced by [`forward_on_tape`].
#[derive(Clone, Copy, Debug)]
pub struct BundleVars {
    pub img: Var,
    pub txt: Var,
    pub joint: Var,
    pub logits: Var,
}

/// Concrete embeddings and logits of one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBundle {
    pub img_emb: Tensor,
    pub txt_emb: Tensor,
    pub joint_emb: Tensor,
    pub logits: Tensor,
}

/// A tokenized batch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor,
    pub tokens: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn from_samples<'a, I>(samples: I, tokenizer: &Tokenizer) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Sample>,
    {
        let mut pixels = Vec::new();
        let mut tokens = Vec::new();
        let mut labels = Vec::new();
        for s in samples {
            if s.image.len() != IMAGE_PIXELS {
                return Err(Error::shape("batch image", &[IMAGE_PIXELS], &[s.image.len()]));
            }
            let ids = tokenizer.tokenize(&s.text);
            if ids.is_empty() {
                return Err(Error::validation(format!(
                    "empty text for patient {} study {}",
                    s.patient_id, s.study_id
                )));
            }
            pixels.extend_from_slice(&s.image);
            tokens.push(ids);
            labels.push(s.label);
        }
        let n = labels.len();
        Ok(Self {
            images: Tensor::new(vec![n, IMAGE_PIXELS], pixels)?,
            tokens,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn affine(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let h = tape.matmul(x, w)?;
    tape.add_row(h, b)
}

pub fn encode_image_on_tape(tape: &mut Tape, p: &ParamVars, images: Var) -> Result<Var> {
    let shape = tape.shape(images);
    if shape.len() != 2 || shape[1] != IMAGE_PIXELS {
        return Err(Error::shape("encode_image", shape, &[IMAGE_PIXELS]));
    }
    let h = affine(tape, images, p.get(ParamId::ImageW1), p.get(ParamId::ImageB1))?;
    let h = tape.relu(h);
    let e = affine(tape, h, p.get(ParamId::ImageW2), p.get(ParamId::ImageB2))?;
    Ok(tape.relu(e))
}

pub fn encode_text_on_tape(tape: &mut Tape, p: &ParamVars, tokens: &[Vec<usize>]) -> Result<Var> {
    let pooled = tape.embedding_bag_mean(p.get(ParamId::TokenEmbedding), tokens)?;
    let e = affine(tape, pooled, p.get(ParamId::TextW), p.get(ParamId::TextB))?;
    Ok(tape.relu(e))
}

pub fn fuse_on_tape(tape: &mut Tape, p: &ParamVars, img: Var, txt: Var) -> Result<Var> {
    if tape.shape(img) != tape.shape(txt) {
        return Err(Error::shape("fuse", tape.shape(img), tape.shape(txt)));
    }
    let both = tape.concat(img, txt)?;
    let g = affine(tape, both, p.get(ParamId::GateW), p.get(ParamId::GateB))?;
    let g = tape.relu(g);
    let t = affine(tape, txt, p.get(ParamId::ShiftW), p.get(ParamId::ShiftB))?;
    let shift = tape.mul(g, t)?;
    let img_norm = tape.l2_norm(img);
    let shift_norm = tape.l2_norm(shift);
    let denom = tape.add_scalar(shift_norm, GATE_EPS);
    let ratio = tape.div(img_norm, denom)?;
    let capped = tape.min_scalar(ratio, 1.0);
    let alpha = tape.scale(capped, p.beta);
    let scaled = tape.mul_col(shift, alpha)?;
    tape.add(img, scaled)
}

pub fn forward_on_tape(tape: &mut Tape, p: &ParamVars, batch: &Batch) -> Result<BundleVars> {
    let images = tape.constant(batch.images.clone());
    let img = encode_image_on_tape(tape, p, images)?;
    let txt = encode_text_on_tape(tape, p, &batch.tokens)?;
    let joint = fuse_on_tape(tape, p, img, txt)?;
    let logits = affine(tape, joint, p.get(ParamId::HeadW), p.get(ParamId::HeadB))?;
    Ok(BundleVars {
        img,
        txt,
        joint,
        logits,
    })
}

/// Image embeddings of a `[B×256]` batch.
pub fn encode_image(params: &ModelParams, images: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let p = params.register(&mut tape, false);
    let x = tape.constant(images.clone());
    let e = encode_image_on_tape(&mut tape, &p, x)?;
    Ok(tape.value(e).clone())
}

/// Text embeddings of whitespace-separated texts.
pub fn encode_text(params: &ModelParams, tokenizer: &Tokenizer, texts: &[&str]) -> Result<Tensor> {
    let tokens = texts
        .iter()
        .map(|t| {
            let ids = tokenizer.tokenize(t);
            if ids.is_empty() {
                Err(Error::validation("encode_text on empty text"))
            } else {
                Ok(ids)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut tape = Tape::new();
    let p = params.register(&mut tape, false);
    let e = encode_text_on_tape(&mut tape, &p, &tokens)?;
    Ok(tape.value(e).clone())
}

pub fn fuse(params: &ModelParams, img_emb: &Tensor, txt_emb: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let p = params.register(&mut tape, false);
    let i = tape.constant(img_emb.clone());
    let t = tape.constant(txt_emb.clone());
    let j = fuse_on_tape(&mut tape, &p, i, t)?;
    Ok(tape.value(j).clone())
}

pub fn forward(params: &ModelParams, batch: &Batch) -> Result<EmbeddingBundle> {
    let mut tape = Tape::new();
    let p = params.register(&mut tape, false);
    let b = forward_on_tape(&mut tape, &p, batch)?;
    Ok(EmbeddingBundle {
        img_emb: tape.value(b.img).clone(),
        txt_emb: tape.value(b.txt).clone(),
        joint_emb: tape.value(b.joint).clone(),
        logits: tape.value(b.logits).clone(),
    })
}

/// Parameters together with the vocabulary they were trained against.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub params: ModelParams,
    pub tokenizer: Tokenizer,
}

/// Samples per inference chunk.
const INFERENCE_CHUNK: usize = 256;

impl Model {
    pub fn new(tokenizer: Tokenizer, beta: f32, seed: u64) -> Self {
        let params = ModelParams::init(tokenizer.len(), beta, seed);
        Self { params, tokenizer }
    }

    pub fn batch<'a, I: IntoIterator<Item = &'a Sample>>(&self, samples: I) -> Result<Batch> {
        Batch::from_samples(samples, &self.tokenizer)
    }

    /// Logits for every sample, in order.
    pub fn logits(&self, samples: &[&Sample]) -> Result<Vec<[f32; NUM_CLASSES]>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(INFERENCE_CHUNK) {
            let batch = self.batch(chunk.iter().copied())?;
            let bundle = forward(&self.params, &batch)?;
            for r in 0..batch.len() {
                let row = bundle.logits.row(r);
                out.push([row[0], row[1], row[2], row[3]]);
            }
        }
        Ok(out)
    }

    /// Softmax probabilities for every sample.
    pub fn predict_proba(&self, samples: &[&Sample]) -> Result<Vec<[f32; NUM_CLASSES]>> {
        Ok(self.logits(samples)?.into_iter().map(|l| softmax(&l)).collect())
    }

    pub fn predict(&self, samples: &[&Sample]) -> Result<Vec<usize>> {
        Ok(self.logits(samples)?.iter().map(|l| argmax(l)).collect())
    }
}

pub fn softmax(logits: &[f32; NUM_CLASSES]) -> [f32; NUM_CLASSES] {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut out = logits.map(|x| (x - max).exp());
    let z: f32 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    out
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
