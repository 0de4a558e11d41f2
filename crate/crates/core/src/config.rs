//! Model and training hyperparameters with a `key = value` text form.
//!
//! ```text
//! # comments and blank lines are ignored
//! hidden_dim = 64
//! seeds = 42,43,44
//! use_gat = false
//! ```

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};
use crate::head::LossWeights;

/// Which architectural blocks are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AblationFlags {
    pub use_gat: bool,
    pub use_memory: bool,
    pub use_span: bool,
    pub use_entities: bool,
    /// Classify from the `[CLS]` encoding alone; requires every `use_*` off.
    pub only_text: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self::FULL
    }
}

impl AblationFlags {
    pub const FULL: Self =
        Self { use_gat: true, use_memory: true, use_span: true, use_entities: true, only_text: false };
    pub const ONLY_TEXT: Self =
        Self { use_gat: false, use_memory: false, use_span: false, use_entities: false, only_text: true };

    pub fn validate(&self) -> Result<()> {
        if self.only_text && (self.use_gat || self.use_memory || self.use_span || self.use_entities) {
            return Err(Error::config("only_text cannot be combined with use_gat/use_memory/use_span/use_entities"));
        }
        Ok(())
    }

    /// The seven ablation variants in report order.
    pub fn variants() -> [(&'static str, AblationFlags); 7] {
        let full = Self::FULL;
        [
            ("full", full),
            ("GAT-only", Self { use_memory: false, use_span: false, ..full }),
            ("w/o-entities", Self { use_entities: false, ..full }),
            ("only-text", Self::ONLY_TEXT),
            ("w/o-GAT", Self { use_gat: false, ..full }),
            ("w/o-GM", Self { use_gat: false, use_memory: false, ..full }),
            ("w/o-span", Self { use_span: false, ..full }),
        ]
    }
}

/// Architecture and loss settings; everything needed to rebuild a model
/// apart from the vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub enc_layers: usize,
    /// Heads of the encoder and of the entity/span attention modules.
    pub heads: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub gat_layers: usize,
    pub gat_heads: usize,
    pub memory_size: usize,
    pub num_spans: usize,
    pub window: usize,
    pub tau: u64,
    pub loss: LossWeights,
    pub ablation: AblationFlags,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            enc_layers: 2,
            heads: 2,
            max_len: 32,
            dropout: 0.5,
            gat_layers: 1,
            gat_heads: 4,
            memory_size: 100,
            num_spans: 5,
            window: 3,
            tau: 1,
            loss: LossWeights::default(),
            ablation: AblationFlags::FULL,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let d = self.hidden_dim;
        let positive = [
            ("hidden_dim", d),
            ("enc_layers", self.enc_layers),
            ("heads", self.heads),
            ("gat_layers", self.gat_layers),
            ("gat_heads", self.gat_heads),
            ("memory_size", self.memory_size),
            ("num_spans", self.num_spans),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{k} must be >= 1")));
        }
        if d % self.heads != 0 {
            return Err(Error::config(format!("hidden_dim {d} is not divisible by heads {}", self.heads)));
        }
        if d % self.gat_heads != 0 {
            return Err(Error::config(format!("hidden_dim {d} is not divisible by gat_heads {}", self.gat_heads)));
        }
        if self.max_len < 5 {
            return Err(Error::config("max_len must leave room for [CLS] x [SEP] e [SEP] (>= 5)"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::config(format!("window must be odd, got {}", self.window)));
        }
        if self.tau == 0 {
            return Err(Error::config("tau must be >= 1"));
        }
        self.loss.validate()?;
        self.ablation.validate()
    }

    /// Loss weights after ablation: a removed span head carries no weight.
    pub fn effective_loss(&self) -> LossWeights {
        let mut lw = self.loss;
        if !self.ablation.use_span || self.ablation.only_text {
            lw.lambda_span = 0.0;
        }
        if self.ablation.only_text {
            lw = LossWeights::ZERO;
        }
        lw
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seeds: Vec<u64>,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub min_count: usize,
    /// Bootstrap resamples for confidence intervals; 0 disables them.
    pub bootstrap: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            lr: 1e-3,
            epochs: 30,
            patience: 7,
            seeds: vec![42, 43, 44],
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            min_count: 1,
            bootstrap: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 || self.epochs == 0 {
            return Err(Error::config("batch_size, patience and epochs must be >= 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seed list is empty"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.adam_eps > 0.0 && self.adam_eps.is_finite())
        {
            return Err(Error::config("AdamW betas must lie in [0, 1) and eps must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay must be >= 0"));
        }
        if self.bootstrap != 0 && self.bootstrap < 100 {
            return Err(Error::config(format!("bootstrap needs >= 100 resamples, got {}", self.bootstrap)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Every accepted key, in the order `to_text` writes them.
pub const KEYS: [&str; 30] = [
    "hidden_dim",
    "enc_layers",
    "heads",
    "max_len",
    "dropout",
    "gat_layers",
    "gat_heads",
    "memory_size",
    "num_spans",
    "window",
    "tau",
    "lambda_span",
    "lambda_pair",
    "lambda_rel",
    "use_gat",
    "use_memory",
    "use_span",
    "use_entities",
    "only_text",
    "batch_size",
    "lr",
    "epochs",
    "patience",
    "seeds",
    "weight_decay",
    "beta1",
    "beta2",
    "adam_eps",
    "min_count",
    "bootstrap",
];

/// Keys that describe the model (stored in checkpoints).
pub const MODEL_KEYS: &[&str] = KEYS.split_at(19).0;

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

pub fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    let seeds = value.split(',').map(|s| parse_num::<u64>("seeds", s.trim())).collect::<Result<Vec<_>>>()?;
    if seeds.is_empty() {
        return Err(Error::config("seed list is empty"));
    }
    Ok(seeds)
}

impl ExperimentConfig {
    /// Set one key. Values are parsed but not cross-validated.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (m, t) = (&mut self.model, &mut self.train);
        match key {
            "hidden_dim" => m.hidden_dim = parse_num(key, value)?,
            "enc_layers" => m.enc_layers = parse_num(key, value)?,
            "heads" => m.heads = parse_num(key, value)?,
            "max_len" => m.max_len = parse_num(key, value)?,
            "dropout" => m.dropout = parse_num(key, value)?,
            "gat_layers" => m.gat_layers = parse_num(key, value)?,
            "gat_heads" => m.gat_heads = parse_num(key, value)?,
            "memory_size" => m.memory_size = parse_num(key, value)?,
            "num_spans" => m.num_spans = parse_num(key, value)?,
            "window" => m.window = parse_num(key, value)?,
            "tau" => m.tau = parse_num(key, value)?,
            "lambda_span" => m.loss.lambda_span = parse_num(key, value)?,
            "lambda_pair" => m.loss.lambda_pair = parse_num(key, value)?,
            "lambda_rel" => m.loss.lambda_rel = parse_num(key, value)?,
            "use_gat" => m.ablation.use_gat = parse_bool(key, value)?,
            "use_memory" => m.ablation.use_memory = parse_bool(key, value)?,
            "use_span" => m.ablation.use_span = parse_bool(key, value)?,
            "use_entities" => m.ablation.use_entities = parse_bool(key, value)?,
            "only_text" => m.ablation.only_text = parse_bool(key, value)?,
            "batch_size" => t.batch_size = parse_num(key, value)?,
            "lr" => t.lr = parse_num(key, value)?,
            "epochs" => t.epochs = parse_num(key, value)?,
            "patience" => t.patience = parse_num(key, value)?,
            "seeds" => t.seeds = parse_seeds(value)?,
            "weight_decay" => t.weight_decay = parse_num(key, value)?,
            "beta1" => t.beta1 = parse_num(key, value)?,
            "beta2" => t.beta2 = parse_num(key, value)?,
            "adam_eps" => t.adam_eps = parse_num(key, value)?,
            "min_count" => t.min_count = parse_num(key, value)?,
            "bootstrap" => t.bootstrap = parse_num(key, value)?,
            _ => return Err(Error::config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let (m, t) = (&self.model, &self.train);
        let v = match key {
            "hidden_dim" => m.hidden_dim.to_string(),
            "enc_layers" => m.enc_layers.to_string(),
            "heads" => m.heads.to_string(),
            "max_len" => m.max_len.to_string(),
            "dropout" => m.dropout.to_string(),
            "gat_layers" => m.gat_layers.to_string(),
            "gat_heads" => m.gat_heads.to_string(),
            "memory_size" => m.memory_size.to_string(),
            "num_spans" => m.num_spans.to_string(),
            "window" => m.window.to_string(),
            "tau" => m.tau.to_string(),
            "lambda_span" => m.loss.lambda_span.to_string(),
            "lambda_pair" => m.loss.lambda_pair.to_string(),
            "lambda_rel" => m.loss.lambda_rel.to_string(),
            "use_gat" => m.ablation.use_gat.to_string(),
            "use_memory" => m.ablation.use_memory.to_string(),
            "use_span" => m.ablation.use_span.to_string(),
            "use_entities" => m.ablation.use_entities.to_string(),
            "only_text" => m.ablation.only_text.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "lr" => t.lr.to_string(),
            "epochs" => t.epochs.to_string(),
            "patience" => t.patience.to_string(),
            "seeds" => t.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
            "weight_decay" => t.weight_decay.to_string(),
            "beta1" => t.beta1.to_string(),
            "beta2" => t.beta2.to_string(),
            "adam_eps" => t.adam_eps.to_string(),
            "min_count" => t.min_count.to_string(),
            "bootstrap" => t.bootstrap.to_string(),
            _ => return None,
        };
        Some(v)
    }

    /// Apply `(key, value)` pairs on top of `self`. `only_text = true` turns
    /// the other blocks off unless one of them is also set to true, which is
    /// a contradiction.
    pub fn apply<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        let mut seen = BTreeSet::new();
        let mut explicit_on = Vec::new();
        for (k, v) in pairs {
            if !seen.insert(k.to_string()) {
                return Err(Error::config(format!("duplicate key `{k}`")));
            }
            self.set(k, v)?;
            if k.starts_with("use_") && parse_bool(k, v)? {
                explicit_on.push(k.to_string());
            }
        }
        if self.model.ablation.only_text {
            if let Some(k) = explicit_on.first() {
                return Err(Error::config(format!("only_text contradicts {k} = true")));
            }
            self.model.ablation = AblationFlags::ONLY_TEXT;
        }
        Ok(())
    }

    /// Parse `key = value` lines over the defaults and validate the result.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Parse `key = value` lines over `self` and validate the result.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| Error::config(format!("line {}: expected `key = value`", n + 1)))?;
            pairs.push((k.trim(), v.trim()));
        }
        self.apply(pairs)?;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        KEYS.iter().map(|&k| (k, self.get(k).expect("every key has a value"))).collect()
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.entries() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
