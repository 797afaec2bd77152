//! Experiment configuration: one JSON document per run.

use std::path::{Path, PathBuf};

use forgetmi::datagen::STANDARD_FORGET_PCTS;
use forgetmi::seed::derive_seed;
use forgetmi::{BaselineConfig, DataConfig, LossWeights, NoiseConfig, TrainConfig, UnlearnConfig, WeightPreset};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "forget-mi")]
    ForgetMi,
    #[serde(rename = "retrain")]
    Retrain,
    #[serde(rename = "neggrad_plus")]
    NeggradPlus,
    #[serde(rename = "cf_k")]
    CfK,
    #[serde(rename = "eu_k")]
    EuK,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::ForgetMi => "forget-mi",
            Method::Retrain => "retrain",
            Method::NeggradPlus => "neggrad_plus",
            Method::CfK => "cf_k",
            Method::EuK => "eu_k",
        }
    }
}

/// A named preset or explicit weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightsSpec {
    Preset(WeightPreset),
    Explicit(LossWeights),
}

impl WeightsSpec {
    pub fn weights(&self) -> LossWeights {
        match self {
            WeightsSpec::Preset(p) => p.weights(),
            WeightsSpec::Explicit(w) => *w,
        }
    }

    /// Preset name, or `custom(uu/ur/mu/mr)` for explicit weights.
    pub fn label(&self) -> String {
        match self {
            WeightsSpec::Preset(p) => p.name().to_owned(),
            WeightsSpec::Explicit(w) => format!("custom({}/{}/{}/{})", w.w_uu, w.w_ur, w.w_mu, w.w_mr),
        }
    }
}

/// Optimisation settings of Forget-MI. Noise and weights live at the top
/// level of [`ExperimentConfig`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnlearnSection {
    pub epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub clip_norm: f32,
}

impl Default for UnlearnSection {
    fn default() -> Self {
        let d = UnlearnConfig::default();
        Self {
            epochs: d.epochs,
            lr: d.lr,
            batch_size: d.batch_size,
            clip_norm: d.clip_norm,
        }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("run")
}

fn default_pct() -> u32 {
    3
}

fn default_method() -> Method {
    Method::ForgetMi
}

/// Seed fields inside the sub-configs are ignored: every stage seed is
/// derived from `seed` (see [`StageSeeds`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_pct")]
    pub forget_pct: u32,
    #[serde(default = "default_method")]
    pub method: Method,
    /// Forget-MI loss weights; defaults to the equal preset.
    #[serde(default)]
    pub weights: Option<WeightsSpec>,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub unlearn: UnlearnSection,
    #[serde(default)]
    pub baseline: BaselineConfig,
    /// Where every command writes its outputs (unless `--out` is given)
    /// and where downstream commands look for `og.ckpt` and the split.
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Dataset directory; defaults to `out_dir`.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config is valid")
    }
}

/// Per-stage seeds fanned out from the global seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageSeeds {
    pub data: u64,
    pub init: u64,
    pub train: u64,
    pub split: u64,
    pub unlearn: u64,
    pub noise: u64,
    pub baseline: u64,
    pub mia: u64,
}

impl StageSeeds {
    /// `derive_seed(seed, [stage name])` for each stage.
    pub fn new(seed: u64) -> Self {
        let d = |name: &str| derive_seed(seed, &[name.into()]);
        Self {
            data: d("data"),
            init: d("init"),
            train: d("train"),
            split: d("split"),
            unlearn: d("unlearn"),
            noise: d("noise"),
            baseline: d("baseline"),
            mia: d("mia"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(&mut *de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("{path}: {}", e.into_inner()))
        })?;
        de.end().map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let field = |name: &str, r: forgetmi::Result<()>| r.map_err(|e| CliError::Config(format!("{name}: {e}")));
        field("data", self.data.validate())?;
        field("train", self.train.validate())?;
        field("baseline", self.baseline.validate())?;
        field("unlearn", self.unlearn_config().validate())?;
        if !STANDARD_FORGET_PCTS.contains(&self.forget_pct) {
            return Err(CliError::Config(format!(
                "forget_pct: must be one of {STANDARD_FORGET_PCTS:?}, got {}",
                self.forget_pct
            )));
        }
        Ok(())
    }

    pub fn seeds(&self) -> StageSeeds {
        StageSeeds::new(self.seed)
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.out_dir.clone())
    }

    pub fn weights_spec(&self) -> WeightsSpec {
        self.weights.clone().unwrap_or(WeightsSpec::Preset(WeightPreset::Equal))
    }

    /// Label recorded in manifests and reports; `-` for baselines.
    pub fn weights_label(&self) -> String {
        match self.method {
            Method::ForgetMi => self.weights_spec().label(),
            _ => "-".to_owned(),
        }
    }

    pub fn data_config(&self) -> DataConfig {
        DataConfig {
            seed: self.seeds().data,
            ..self.data.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seeds().train,
            ..self.train.clone()
        }
    }

    pub fn unlearn_config(&self) -> UnlearnConfig {
        let seeds = self.seeds();
        UnlearnConfig {
            epochs: self.unlearn.epochs,
            lr: self.unlearn.lr,
            batch_size: self.unlearn.batch_size,
            clip_norm: self.unlearn.clip_norm,
            noise: NoiseConfig {
                seed: seeds.noise,
                ..self.noise.clone()
            },
            weights: self.weights_spec().weights(),
            seed: seeds.unlearn,
        }
    }

    pub fn baseline_config(&self) -> BaselineConfig {
        BaselineConfig {
            seed: self.seeds().baseline,
            ..self.baseline.clone()
        }
    }

    /// SHA-256 of the canonical JSON form of the config.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
