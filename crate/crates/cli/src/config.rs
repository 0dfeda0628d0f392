//! Run configuration: built-in defaults, overlaid by an optional JSON file,
//! overlaid by command-line flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use ulasan::corpus::ColumnConfig;
use ulasan::linear::SgdOptions;
use ulasan::neural::ModelConfig;
use ulasan::training::TrainConfig;
use ulasan::vectorize::TfidfOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub columns: ColumnConfig,
    pub min_count: usize,
    /// Slang lexicon replacing the shipped seed table.
    pub lexicon: Option<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            columns: ColumnConfig::default(),
            min_count: 1,
            lexicon: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearConfig {
    pub folds: usize,
    pub sgd: SgdOptions,
    pub smoothing: f64,
    pub class_weighted: bool,
    pub tfidf: TfidfOptions,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            sgd: SgdOptions::default(),
            smoothing: 1.0,
            class_weighted: true,
            tfidf: TfidfOptions::default(),
        }
    }
}

/// Everything a training command needs, fully resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub data: DataConfig,
    pub train: TrainConfig,
    pub linear: LinearConfig,
    /// Architecture overrides applied on top of the per-model defaults.
    pub model: Map<String, Value>,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            train: TrainConfig::default(),
            linear: LinearConfig::default(),
            model: Map::new(),
        }
    }
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub weight_decay: Option<f64>,
    pub dropout: Option<f64>,
    pub max_len: Option<usize>,
    pub embed_dim: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub folds: Option<usize>,
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

impl RunSettings {
    pub fn resolve(file: Option<&Path>, flags: &Overrides) -> Result<Self> {
        let mut value = serde_json::to_value(Self::default())?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
            let over: Value =
                serde_json::from_str(&text).with_context(|| format!("config {} is not valid JSON", path.display()))?;
            if !over.is_object() {
                bail!("config {} must contain a JSON object", path.display());
            }
            merge(&mut value, over);
        }
        let mut s: Self = serde_json::from_value(value).context("invalid configuration")?;
        if let Some(v) = flags.seed {
            s.train.seed = v;
            s.linear.sgd.seed = v;
        }
        // optimizer flags apply to whichever track runs
        if let Some(v) = flags.lr {
            s.train.lr = v;
            s.linear.sgd.lr = v;
        }
        if let Some(v) = flags.epochs {
            s.train.max_epochs = v;
            s.linear.sgd.epochs = v;
        }
        if let Some(v) = flags.batch_size {
            s.train.batch_size = v;
            s.linear.sgd.batch_size = v;
        }
        if let Some(v) = flags.weight_decay {
            s.train.weight_decay = v;
            s.linear.sgd.l2 = v;
        }
        if let Some(v) = flags.folds {
            s.linear.folds = v;
        }
        for (key, v) in [
            ("dropout", flags.dropout.map(Value::from)),
            ("max_len", flags.max_len.map(Value::from)),
            ("embed_dim", flags.embed_dim.map(Value::from)),
            ("hidden_dim", flags.hidden_dim.map(Value::from)),
        ] {
            if let Some(v) = v {
                s.model.insert(key.into(), v);
            }
        }
        for key in ["model_name", "vocab_size"] {
            if s.model.contains_key(key) {
                bail!("model.{key} cannot be set in a config file; use --model and the data instead");
            }
        }
        s.train.validate()?;
        Ok(s)
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    /// The architecture config for `model_name` at the given vocabulary
    /// size with the configured overrides applied.
    pub fn model_config(&self, model_name: &str, vocab_size: usize) -> Result<ModelConfig> {
        ModelConfig::for_model(model_name, vocab_size)?;
        let mut v = Map::new();
        v.insert("model_name".into(), model_name.into());
        v.insert("vocab_size".into(), vocab_size.into());
        v.extend(self.model.clone());
        let cfg: ModelConfig = serde_json::from_value(Value::Object(v)).context("invalid model overrides")?;
        cfg.validate()?;
        Ok(cfg)
    }
}
