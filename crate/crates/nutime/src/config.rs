//! Run configuration: TOML file, then CLI overrides.

use std::fs;
use std::path::Path;

use nutime_core::byol::ByolConfig;
use nutime_core::eval::{EpisodeSpec, FinetuneConfig, ProbeConfig};
use nutime_core::ModelConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    /// Defaults to the number of labelled classes.
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnomalyConfig {
    /// Quantile of normal-train distances used as the decision threshold.
    pub quantile: f64,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        AnomalyConfig { quantile: 0.95 }
    }
}

/// Every tunable of every subcommand. Paths are not part of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; copied into every stage's own seed.
    pub seed: u64,
    pub threads: Option<usize>,
    /// Run arithmetic in f64 instead of f32.
    pub f64: bool,
    /// Drop series longer than this when loading.
    pub max_len: Option<usize>,
    pub model: ModelConfig,
    pub pretrain: ByolConfig,
    pub finetune: FinetuneConfig,
    pub fewshot: EpisodeSpec,
    pub probe: ProbeConfig,
    pub cluster: ClusterConfig,
    pub anomaly: AnomalyConfig,
}

impl Default for RunConfig {
    /// The desk-scale trunk: a full-width model is set through `[model]`.
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: None,
            f64: false,
            max_len: None,
            model: ModelConfig::desk(),
            pretrain: ByolConfig::default(),
            finetune: FinetuneConfig::default(),
            fewshot: EpisodeSpec::default(),
            probe: ProbeConfig::default(),
            cluster: ClusterConfig::default(),
            anomaly: AnomalyConfig::default(),
        }
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Parses a TOML file; keys it leaves out keep their `RunConfig::default()` values.
    pub fn from_toml(text: &str) -> Result<Self> {
        let over: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut base = toml::Value::try_from(RunConfig::default()).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, over);
        base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Propagates the master seed and checks the model and trainer settings.
    pub fn resolve(mut self) -> Result<Self> {
        self.pretrain.seed = self.seed;
        self.finetune.seed = self.seed;
        self.fewshot.seed = self.seed;
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.anomaly.quantile) {
            return Err(Error::Config(format!("anomaly.quantile {} outside [0, 1]", self.anomaly.quantile)));
        }
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(self)
    }

    /// First 16 hex digits of the SHA-256 of the JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nutime_core::EncodingMode;

    #[test]
    fn partial_file_keeps_desk_defaults() {
        let c = RunConfig::from_toml("seed = 3\n[model]\nencoding = \"identity\"\n[pretrain]\nepochs = 2\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.model.encoding, EncodingMode::Identity);
        assert_eq!(c.model.d_model, ModelConfig::desk().d_model);
        assert_eq!(c.pretrain.epochs, 2);
        assert_eq!(c.pretrain.batch_size, ByolConfig::default().batch_size);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("sed = 3\n").is_err());
        assert!(RunConfig::from_toml("[model]\nd_modle = 3\n").is_err());
        assert!(RunConfig::from_toml("[model.nme]\nscale = [1.0]\n").is_err());
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let c = RunConfig::default().resolve().unwrap();
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let other = RunConfig { seed: 1, ..c.clone() };
        assert_ne!(other.hash(), c.hash());
    }
}
