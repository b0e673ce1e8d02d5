//! Run configuration: every module config plus paths, read from TOML and
//! overridable from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MatchMode;
use crate::model::ModelConfig;
use crate::predict::PredictOptions;
use crate::qa::ExampleConfig;
use crate::synth::SynthConfig;
use crate::tracker::TrackerThresholds;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    pub min_word_count: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            lowercase: true,
            min_word_count: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Corpus root holding `train/` and `dev/` in the SGD layout.
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/checkpoint`.
    pub checkpoint: Option<PathBuf>,
    /// Defaults to `<output_dir>/vocab.txt`.
    pub vocab: Option<PathBuf>,
    /// Master seed; copied into every module seed by [`RunConfig::set_seed`].
    pub seed: u64,
    pub workers: usize,
    pub match_mode: MatchMode,
    pub tokenizer: TokenizerConfig,
    pub examples: ExampleConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub predict: PredictOptions,
    pub tracker: TrackerThresholds,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut c = Self {
            data_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("runs/default"),
            checkpoint: None,
            vocab: None,
            seed: 42,
            workers: 1,
            match_mode: MatchMode::Strict,
            tokenizer: TokenizerConfig::default(),
            examples: ExampleConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            predict: PredictOptions::default(),
            tracker: TrackerThresholds::default(),
            synth: SynthConfig::default(),
        };
        c.set_seed(42);
        c
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Parses a TOML document; missing fields take their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.examples.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
        self.synth.seed = seed;
    }

    /// Keeps the duplicated settings of different modules in agreement.
    pub fn sync(&mut self) {
        self.predict.max_seq_len = self.examples.max_seq_len;
        self.predict.normalize_names = self.examples.normalize_names;
        self.model.encoder.max_positions = self
            .model
            .encoder
            .max_positions
            .max(self.examples.max_seq_len);
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.tracker.validate()?;
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.examples.max_seq_len < 4 {
            return Err(Error::Config("max_seq_len must be at least 4".into()));
        }
        Ok(())
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.output_dir.join("checkpoint"))
    }

    pub fn vocab_path(&self) -> PathBuf {
        self.vocab
            .clone()
            .unwrap_or_else(|| self.output_dir.join("vocab.txt"))
    }

    pub fn split_dir(&self, split: &str) -> PathBuf {
        self.data_dir.join(split)
    }

    /// Writes the resolved configuration next to a command's outputs.
    pub fn write_resolved(&self, command: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.output_dir).map_err(|e| Error::io(&self.output_dir, e))?;
        let path = self.output_dir.join(format!("{command}.config.toml"));
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = RunConfig::default();
        let back: RunConfig = toml::from_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        let partial: RunConfig = toml::from_str("seed = 3\n[train]\nepochs = 5\n").unwrap();
        assert_eq!(partial.train.epochs, 5);
        assert_eq!(partial.train.batch_size, 32);
    }

    #[test]
    fn seed_propagates() {
        let mut c = RunConfig::default();
        c.set_seed(9);
        assert_eq!(
            (c.model.seed, c.train.seed, c.examples.seed, c.synth.seed),
            (9, 9, 9, 9)
        );
    }
}
