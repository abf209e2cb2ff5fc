use std::path::{Path, PathBuf};

use aoa_core::corpus::Format;
use aoa_core::model::ModelConfig;
use aoa_core::rerank::MiraConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// Overrides `output_dir` from the config file.
pub const OUTPUT_DIR_ENV: &str = "AOA_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub format: Format,
    pub min_count: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { train: None, valid: None, test: None, format: Format::Cbt, min_count: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub order: usize,
    pub classes: usize,
    pub cluster_iters: usize,
    /// Divide LM features by sentence length.
    pub normalize: bool,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self { order: 8, classes: 1000, cluster_iters: 20, normalize: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankConfig {
    pub n_best: usize,
    pub mira: MiraConfig,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self { n_best: 5, mira: MiraConfig::default() }
    }
}

/// Everything a pipeline run needs. The top-level `seed` is copied into
/// `model.seed` and `rerank.mira.seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub lm: LmConfig,
    pub rerank: RerankConfig,
    /// Models trained by `train --ensemble`.
    pub ensemble_size: usize,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            model: ModelConfig::default(),
            lm: LmConfig::default(),
            rerank: RerankConfig::default(),
            ensemble_size: 4,
            output_dir: PathBuf::from("out"),
            seed: 1,
        }
    }
}

impl RunConfig {
    /// Reads the optional JSON file, applies `key.path=value` overrides
    /// (values parsed as JSON, else taken as strings), then the output
    /// directory variable.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut config: RunConfig = serde_json::from_value(value).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                config.output_dir = PathBuf::from(dir);
            }
        }
        config.model.seed = config.seed;
        config.rerank.mira.seed = config.seed;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate()?;
        self.rerank.mira.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let bad = |m: &str| Err(CliError::Usage(m.to_owned()));
        if self.rerank.n_best == 0 {
            return bad("rerank.n_best must be at least 1");
        }
        if self.lm.order == 0 {
            return bad("lm.order must be at least 1");
        }
        if self.lm.classes < 2 {
            return bad("lm.classes must be at least 2");
        }
        if self.ensemble_size == 0 {
            return bad("ensemble_size must be at least 1");
        }
        Ok(())
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

fn apply_override(root: &mut Value, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| CliError::Usage(format!("override {spec:?} is not key=value")))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::Usage(format!("override {spec:?} has an empty key segment")));
        }
        let obj = match node {
            Value::Object(m) => m,
            _ => return Err(CliError::Usage(format!("override {spec:?}: {} is not an object", parts[..i].join(".")))),
        };
        if i + 1 == parts.len() {
            obj.insert((*part).to_owned(), parsed);
            return Ok(());
        }
        node = obj.entry((*part).to_owned()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}
