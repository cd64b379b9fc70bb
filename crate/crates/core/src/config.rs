//! The TOML configuration shared by every command.
//!
//! Every section is optional and falls back to defaults. Unknown keys are
//! rejected. Individual keys can be overridden with `section.key=value`
//! strings, where `value` is a TOML value (`train.epochs=5`,
//! `isr.origin="anchor"`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::{ExternalMapping, LabelerConfig};
use crate::kinematics::{InterceptorOrigin, InterceptorSpec, IsrSettings, ScaleModel};
use crate::synth::SynthSpec;
use crate::tokenizer::TokenizerConfig;
use crate::training::TrainConfig;
use crate::transformer::ModelConfig;

/// Model shape; window and horizon come from the tokenizer section.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub use_acceleration: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            d_model: m.d_model,
            layers: m.layers,
            heads: m.heads,
            ffn_mult: m.ffn_mult,
            use_acceleration: m.use_acceleration,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct IsrSection {
    pub origin: InterceptorOrigin,
    pub all_steps: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestSection {
    pub max_gap: u64,
    /// Label tracks that arrive without labels.
    pub label_unlabeled: bool,
    pub mapping: ExternalMapping,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self {
            max_gap: 5,
            label_unlabeled: true,
            mapping: ExternalMapping::default(),
        }
    }
}

/// Defaults for command inputs and outputs; command-line arguments win.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    pub tokenizer: TokenizerConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub interceptor: InterceptorSpec,
    pub scale: ScaleModel,
    pub isr: IsrSection,
    pub synth: SynthSpec,
    pub labeler: LabelerConfig,
    pub ingest: IngestSection,
    pub paths: PathsSection,
}

impl AppConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d_model: self.model.d_model,
            layers: self.model.layers,
            heads: self.model.heads,
            window: self.tokenizer.window,
            horizon: self.tokenizer.horizon,
            ffn_mult: self.model.ffn_mult,
            use_acceleration: self.model.use_acceleration,
        }
    }

    pub fn isr_settings(&self) -> IsrSettings {
        IsrSettings {
            interceptor: self.interceptor,
            scale: self.scale,
            origin: self.isr.origin,
            all_steps: self.isr.all_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tokenizer.validate()?;
        self.model_config().validate()?;
        self.train.validate()?;
        self.isr_settings().validate()?;
        self.synth.validate_for(&self.tokenizer)?;
        self.labeler.validate()?;
        if !(self.ingest.mapping.fps.is_finite() && self.ingest.mapping.fps > 0.0) {
            return Err(Error::InvalidSpec("ingest.mapping.fps must be positive".into()));
        }
        Ok(())
    }

    /// Sets every seed in the configuration.
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.synth.seed = seed;
    }

    /// Parses TOML text, applies `overrides` and validates the result.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::InvalidSpec(format!("config: {e}")))?;
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        let cfg: AppConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidSpec(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path` (or defaults when `None`) with `overrides` applied.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p)
                .map_err(|e| Error::io(format!("reading config {}", p.display()), e))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical TOML form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

/// Applies one `dotted.key=value` override to a TOML table.
pub fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let bad = |msg: String| Error::InvalidSpec(format!("override `{item}`: {msg}"));
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| bad("expected key=value".into()))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(bad("empty key segment".into()));
    }
    let raw = raw.trim();
    // bare words are taken as strings
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cursor = table;
    for segment in parents {
        let entry = cursor
            .entry(segment.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| bad(format!("`{segment}` is not a section")))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}
