//! Multimodal machine unlearning on a desk-scale image+text classifier.
//!
//! The crate contains a small reverse-mode autodiff engine, a synthetic
//! patient dataset generator, a gated-fusion classifier, the Forget-MI
//! unlearning procedure, comparison baselines and the evaluation suite
//! (macro-F1/AUC, membership inference, model distance, loss histograms).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod baselines;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod model;
pub mod optim;
pub mod perturb;
pub mod seed;
pub mod tensor;
pub mod unlearn;

pub use baselines::{BaselineConfig, BaselineMethod};
pub use datagen::{DataConfig, Dataset, ForgetSplit, Sample, SampleId};
pub use error::{Error, Result};
pub use eval::{evaluate, MetricsReport};
pub use model::{Model, ModelParams, TrainConfig};
pub use perturb::NoiseConfig;
pub use tensor::Tensor;
pub use unlearn::{LossWeights, UnlearnConfig, WeightPreset};
