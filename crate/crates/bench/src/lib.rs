//! Shared fixtures for the benchmarks.

use forgetmi::datagen::{generate, split_forget};
use forgetmi::model::{train_original, Tokenizer, DEFAULT_BETA};
use forgetmi::{DataConfig, Dataset, Model, TrainConfig};

/// A small dataset and a briefly trained model on it.
pub struct Fixture {
    pub data: Dataset,
    pub model: Model,
}

impl Fixture {
    pub fn new(n_patients: usize) -> Self {
        let data = generate(&DataConfig {
            n_patients,
            ..DataConfig::default()
        })
        .expect("default data config is valid");
        let init = Model::new(Tokenizer::from_samples(&data.train), DEFAULT_BETA, 0);
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let (model, _) = train_original(&init, &data.train, &cfg).expect("training succeeds");
        Self { data, model }
    }

    /// Forget and retain sets of a `pct`% split.
    pub fn split(&self, pct: u32) -> (Vec<&forgetmi::Sample>, Vec<&forgetmi::Sample>) {
        split_forget(&self.data.train, pct, 0)
            .expect("split succeeds")
            .partition(&self.data.train)
    }
}
