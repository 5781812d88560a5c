//! Run configuration files.
//!
//! A run is fully described by one TOML document. Flags override file
//! values, and every command writes the merged result next to its outputs
//! as `resolved-config.toml`, which reproduces the run when passed back via
//! `--config`.

use std::fs;
use std::path::{Path, PathBuf};

use devid_core::synth::SynthCorpusSpec;
use devid_core::train::{TrainConfig, Trainable};
use devid_core::{FrameSpec, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const RESOLVED_CONFIG: &str = "resolved-config.toml";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferConfig {
    pub trainable: Trainable,
    pub train: TrainConfig,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig { trainable: Trainable::Head, train: TrainConfig::transfer_preset() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Source of all randomness in the run.
    pub seed: u64,
    pub threads: usize,
    /// Ablation group applied to `model`.
    pub group: Option<u8>,
    pub paths: Paths,
    pub synth: SynthCorpusSpec,
    pub frame: FrameSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub transfer: TransferConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: 1,
            group: None,
            paths: Paths::default(),
            synth: SynthCorpusSpec::default(),
            frame: FrameSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            transfer: TransferConfig::default(),
        }
    }
}

/// A parsed configuration plus which optional keys the file set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Loaded {
    pub config: RunConfig,
    /// `model.n_classes` was given explicitly.
    pub n_classes_set: bool,
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Loaded> {
        let err = |detail: String| Error::Config { path: path.to_path_buf(), detail };
        let table: toml::Table = toml::from_str(text).map_err(|e| err(e.to_string()))?;
        let n_classes_set = table
            .get("model")
            .and_then(|m| m.as_table())
            .is_some_and(|m| m.contains_key("n_classes"));
        let config: RunConfig = toml::from_str(text).map_err(|e| err(e.to_string()))?;
        Ok(Loaded { config, n_classes_set })
    }

    pub fn load(path: &Path) -> Result<Loaded> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config { path: path.to_path_buf(), detail: e.to_string() })?;
        Self::parse(&text, path)
    }

    /// Sets every seed in the run from the top-level one.
    pub fn propagate_seed(&mut self) {
        self.synth.seed = self.seed;
        self.train.seed = self.seed;
        self.transfer.train.seed = self.seed;
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Usage(format!("configuration cannot be written as TOML: {e}")))
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let path = dir.join(RESOLVED_CONFIG);
        fs::write(&path, self.to_toml()?).map_err(Error::io(&path))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_config_round_trips() {
        let mut cfg = RunConfig { seed: 9, group: Some(3), ..Default::default() };
        cfg.paths.features = Some("f.ttf".into());
        cfg.transfer.trainable = Trainable::MlpAndHead;
        cfg.propagate_seed();
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::parse(&text, Path::new("x.toml")).unwrap();
        assert_eq!(back.config, cfg);
        assert!(back.n_classes_set);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["sed = 1", "[train]\nlearning_rate = 0.1", "[model]\nheads = 2\nbogus = true", "[nope]"] {
            let err = RunConfig::parse(text, Path::new("x.toml")).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}");
        }
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let loaded = RunConfig::parse("seed = 4\n[train]\nepochs = 3\n", Path::new("x.toml")).unwrap();
        assert_eq!(loaded.config.train.epochs, 3);
        assert_eq!(loaded.config.train.lr, 1e-4);
        assert_eq!(loaded.config.transfer.train.lr, 1e-5);
        assert!(!loaded.n_classes_set);
    }
}
