//! Run configuration: a TOML file with sections, plus `section.key=value`
//! overrides applied before validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineKind;
use crate::error::{Error, Result};
use crate::eval::{Averaging, DEFAULT_FRACTIONS};
use crate::features::{BlockMode, FeatureSet, InputOptions, DEFAULT_EMBEDDING_DIM, DEFAULT_PCA_COMPONENTS};
use crate::model::{ModelConfig, DEFAULT_HIDDEN, DEFAULT_LAYERS, DEFAULT_LR};
use crate::nn::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    #[serde(default)]
    pub graph: GraphConfig,
    #[serde(default)]
    pub features: FeaturesConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub input: PathBuf,
    pub work_dir: PathBuf,
    /// Precomputed `EMB1` embeddings; when absent the hashing fallback runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    pub delta_minutes: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig { delta_minutes: 15.0 }
    }
}

impl GraphConfig {
    pub fn delta_seconds(&self) -> i64 {
        (self.delta_minutes * 60.0).round() as i64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesConfig {
    pub embedding_dim: usize,
    pub pca_components: usize,
    pub standardize: bool,
    pub phi: BlockMode,
    pub omega: BlockMode,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        FeaturesConfig {
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            pca_components: DEFAULT_PCA_COMPONENTS,
            standardize: true,
            phi: BlockMode::Raw,
            omega: BlockMode::Raw,
        }
    }
}

impl FeaturesConfig {
    pub fn feature_set(&self) -> FeatureSet {
        FeatureSet::new(self.phi, self.omega)
    }

    pub fn input_options(&self) -> InputOptions {
        InputOptions {
            standardize: self.standardize,
            pca_components: self.pca_components,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: usize,
    pub layers: usize,
    pub weighted_agg: bool,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub min_lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pos_weight: Option<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let t = TrainConfig::with_lr(DEFAULT_LR, 0);
        ModelSection {
            hidden: DEFAULT_HIDDEN,
            layers: DEFAULT_LAYERS,
            weighted_agg: false,
            lr: DEFAULT_LR,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            plateau_patience: t.plateau_patience,
            early_stop_patience: t.early_stop_patience,
            min_lr: t.min_lr,
            pos_weight: None,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            layers: self.layers,
            weighted_agg: self.weighted_agg,
        }
    }

    /// Training settings with the given learning rate and seed.
    pub fn train_config(&self, lr: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            lr,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            plateau_patience: self.plateau_patience,
            early_stop_patience: self.early_stop_patience,
            min_lr: self.min_lr,
            seed,
            pos_weight: self.pos_weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub fractions: [f64; 3],
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            fractions: DEFAULT_FRACTIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub averaging: Averaging,
    pub baselines: Vec<BaselineKind>,
    /// Also run the seven-row feature ablation.
    pub ablation: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            averaging: Averaging::Macro,
            baselines: vec![BaselineKind::Mlp, BaselineKind::Cnn1d, BaselineKind::LinearProbe],
            ablation: false,
        }
    }
}

/// Set `section.key` (or a top-level `key`) in a parsed TOML table. The value
/// is parsed as a TOML value, falling back to a plain string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value = parse_value(raw.trim());
    let mut parts: Vec<&str> = key.trim().split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| Error::Config(format!("empty key in {assignment:?}")))?;
    let mut cursor = table;
    for part in parts {
        cursor = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{part} is not a section")))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl RunConfig {
    /// Parse TOML text and apply overrides, then validate the values.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate_values()?;
        Ok(config)
    }

    /// Load a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_str(&text, overrides)?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.paths.input = base.join(&config.paths.input);
        config.paths.work_dir = base.join(&config.paths.work_dir);
        config.paths.embeddings = config.paths.embeddings.map(|p| base.join(p));
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate_values(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.graph.delta_minutes > 0.0) || self.graph.delta_seconds() <= 0 {
            return bad(format!("delta_minutes must be positive, got {}", self.graph.delta_minutes));
        }
        let f = self.split.fractions;
        if f.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("split fractions {f:?} must sum to 1"));
        }
        if self.features.embedding_dim == 0 || self.features.pca_components == 0 {
            return bad("embedding_dim and pca_components must be positive".into());
        }
        let m = &self.model;
        if m.hidden == 0 || m.layers == 0 || m.batch_size == 0 || m.max_epochs == 0 {
            return bad("model sizes, batch size and epoch count must be positive".into());
        }
        if !(m.lr > 0.0) || !(m.min_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if m.pos_weight.is_some_and(|w| !(w > 0.0)) {
            return bad("pos_weight must be positive".into());
        }
        Ok(())
    }

    /// Referenced inputs must exist.
    pub fn validate_paths(&self) -> Result<()> {
        if !self.paths.input.is_file() {
            return Err(Error::InputNotFound(self.paths.input.clone()));
        }
        if let Some(e) = &self.paths.embeddings {
            if !e.is_file() {
                return Err(Error::InputNotFound(e.clone()));
            }
        }
        Ok(())
    }
}
