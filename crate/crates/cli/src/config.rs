//! Optional config file (TOML, or JSON by extension). Command-line flags
//! override any key set here.

use std::path::{Path, PathBuf};

use mirrorlm::eval::LongPolicy;
use mirrorlm::synth::GrammarConfig;
use mirrorlm::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub prepare: PrepareSection,
    pub tokenizer: TokenizerSection,
    pub model: ModelSection,
    pub train: Option<toml::Table>,
    pub eval: EvalSection,
    pub synth: SynthSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareSection {
    pub split: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerSection {
    pub vocab_size: Option<usize>,
}

/// A preset plus optional per-field overrides.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Option<String>,
    pub context_length: Option<usize>,
    pub n_layers: Option<usize>,
    pub n_heads: Option<usize>,
    pub d_model: Option<usize>,
    pub d_ff: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub prefix: Option<String>,
    pub long_policy: Option<LongPolicy>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub grammar: Option<GrammarConfig>,
    pub items: Option<usize>,
    pub participants: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Failure::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let bad = |e: String| Failure::Validation(format!("config {}: {e}", path.display()));
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            serde_json::from_str(&raw).map_err(|e| bad(e.to_string()))
        } else {
            toml::from_str(&raw).map_err(|e| bad(e.to_string()))
        }
    }

    /// The `[train]` section over defaults, and whether it set `chunk_size`.
    pub fn train_config(&self) -> Result<(TrainConfig, bool), Failure> {
        match &self.train {
            None => Ok((TrainConfig::default(), false)),
            Some(t) => {
                let cfg: TrainConfig = t
                    .clone()
                    .try_into()
                    .map_err(|e: toml::de::Error| Failure::Validation(format!("[train]: {e}")))?;
                Ok((cfg, t.contains_key("chunk_size")))
            }
        }
    }
}
