//! Model and training configuration, with a `key = value` text form.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::tensor::AdamWConfig;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {value}")]
    BadValue { key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Which bonds the atom encoder sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Only bonds inside each fragment.
    Fragment,
    /// Every bond of the molecule.
    Molecule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateKind {
    /// One gate value per hidden dimension.
    Elementwise,
    /// One gate value per fragment.
    Scalar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub gin_layers: usize,
    pub transformer_layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub regime: Regime,
    pub gate: GateKind,
    pub mask_ratio: f64,
    /// Number of token ids, specials included.
    pub vocab_size: usize,
}

pub const DISTANCE_CAP: usize = 8;

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: 64,
            gin_layers: 3,
            transformer_layers: 4,
            heads: 4,
            ffn_dim: 256,
            dropout: 0.1,
            regime: Regime::Fragment,
            gate: GateKind::Elementwise,
            mask_ratio: 0.2,
            vocab_size: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        if self.hidden_dim == 0 || self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
            return bad("hidden_dim must be a positive multiple of heads");
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return bad("mask_ratio must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.vocab_size <= crate::tokenizer::N_SPECIAL {
            return bad("vocab_size must exceed the special tokens");
        }
        if self.ffn_dim == 0 {
            return bad("ffn_dim must be positive");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }
}

/// Optimization and schedule settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: AdamWConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Fine-tuning: epochs of head-only training.
    pub head_epochs: usize,
    /// Fine-tuning: transformer layers unfrozen in stage two.
    pub unfreeze_layers: usize,
    /// Fine-tuning: backbone learning-rate multiplier in stage two.
    pub backbone_lr_scale: f64,
    pub pos_weight: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: AdamWConfig::default(),
            batch_size: 32,
            epochs: 10,
            seed: 0,
            head_epochs: 10,
            unfreeze_layers: 2,
            backbone_lr_scale: 0.1,
            pos_weight: true,
        }
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

/// Both configurations, read from and written to one text file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        for (k, v) in parse_kv(text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        let (m, t) = (&mut self.model, &mut self.train);
        match key {
            "hidden_dim" => m.hidden_dim = parse(key, v)?,
            "gin_layers" => m.gin_layers = parse(key, v)?,
            "transformer_layers" => m.transformer_layers = parse(key, v)?,
            "heads" => m.heads = parse(key, v)?,
            "ffn_dim" => m.ffn_dim = parse(key, v)?,
            "dropout" => m.dropout = parse(key, v)?,
            "mask_ratio" => m.mask_ratio = parse(key, v)?,
            "vocab_size" => m.vocab_size = parse(key, v)?,
            "distance_cap" => {
                if v != DISTANCE_CAP.to_string() {
                    return Err(ConfigError::BadValue {
                        key: key.into(),
                        value: v.into(),
                    });
                }
            }
            "regime" => {
                m.regime = match v {
                    "fragment" => Regime::Fragment,
                    "molecule" => Regime::Molecule,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            value: v.into(),
                        })
                    }
                }
            }
            "gate" => {
                m.gate = match v {
                    "elementwise" => GateKind::Elementwise,
                    "scalar" => GateKind::Scalar,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            value: v.into(),
                        })
                    }
                }
            }
            "lr" => t.optimizer.lr = parse(key, v)?,
            "beta1" => t.optimizer.beta1 = parse(key, v)?,
            "beta2" => t.optimizer.beta2 = parse(key, v)?,
            "eps" => t.optimizer.eps = parse(key, v)?,
            "weight_decay" => t.optimizer.weight_decay = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "head_epochs" => t.head_epochs = parse(key, v)?,
            "unfreeze_layers" => t.unfreeze_layers = parse(key, v)?,
            "backbone_lr_scale" => t.backbone_lr_scale = parse(key, v)?,
            "pos_weight" => t.pos_weight = parse(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let (m, t) = (&self.model, &self.train);
        let mut s = String::new();
        let regime = match m.regime {
            Regime::Fragment => "fragment",
            Regime::Molecule => "molecule",
        };
        let gate = match m.gate {
            GateKind::Elementwise => "elementwise",
            GateKind::Scalar => "scalar",
        };
        let pairs: Vec<(&str, String)> = vec![
            ("hidden_dim", m.hidden_dim.to_string()),
            ("gin_layers", m.gin_layers.to_string()),
            ("transformer_layers", m.transformer_layers.to_string()),
            ("heads", m.heads.to_string()),
            ("ffn_dim", m.ffn_dim.to_string()),
            ("dropout", m.dropout.to_string()),
            ("distance_cap", DISTANCE_CAP.to_string()),
            ("regime", regime.to_string()),
            ("gate", gate.to_string()),
            ("mask_ratio", m.mask_ratio.to_string()),
            ("vocab_size", m.vocab_size.to_string()),
            ("lr", t.optimizer.lr.to_string()),
            ("beta1", t.optimizer.beta1.to_string()),
            ("beta2", t.optimizer.beta2.to_string()),
            ("eps", t.optimizer.eps.to_string()),
            ("weight_decay", t.optimizer.weight_decay.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("epochs", t.epochs.to_string()),
            ("seed", t.seed.to_string()),
            ("head_epochs", t.head_epochs.to_string()),
            ("unfreeze_layers", t.unfreeze_layers.to_string()),
            ("backbone_lr_scale", t.backbone_lr_scale.to_string()),
            ("pos_weight", t.pos_weight.to_string()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
