//! Hyperparameters and the flat `key = value` config format.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_fraction: f64,
    pub dropout: f64,
    pub hidden: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            learning_rate: 5e-2,
            weight_decay: 1e-2,
            epochs: 100,
            batch_size: 64,
            warmup_fraction: 0.10,
            dropout: 0.5,
            hidden: 1024,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value `{value}` for `{key}`")]
    BadValue { line: usize, key: String, value: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("invalid hyperparameters: {0}")]
    Invalid(String),
}

pub const KEYS: [&str; 11] = [
    "learning_rate",
    "weight_decay",
    "epochs",
    "batch_size",
    "warmup_fraction",
    "dropout",
    "hidden",
    "seed",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
];

impl HyperParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.learning_rate) {
            return bad("learning_rate must be finite and >= 0");
        }
        if !finite_nonneg(self.weight_decay) {
            return bad("weight_decay must be finite and >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.hidden == 0 {
            return bad("hidden must be positive");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !finite_nonneg(self.adam_eps) {
            return bad("adam_eps must be finite and >= 0");
        }
        Ok(())
    }

    /// Starts from the defaults and applies every `key = value` line.
    /// Blank lines and `#` comments are ignored.
    pub fn parse_config(text: &str) -> Result<Self, ConfigError> {
        let mut hp = Self::default();
        let mut seen: Vec<&str> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key) {
                return Err(ConfigError::DuplicateKey { line, key: key.into() });
            }
            hp.set(key, value, line)?;
            seen.push(KEYS.iter().find(|k| **k == key).expect("set accepted the key"));
        }
        hp.validate()?;
        Ok(hp)
    }

    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        fn parse<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError::BadValue {
                line,
                key: key.into(),
                value: value.into(),
            })
        }
        match key {
            "learning_rate" => self.learning_rate = parse(key, value, line)?,
            "weight_decay" => self.weight_decay = parse(key, value, line)?,
            "epochs" => self.epochs = parse(key, value, line)?,
            "batch_size" => self.batch_size = parse(key, value, line)?,
            "warmup_fraction" => self.warmup_fraction = parse(key, value, line)?,
            "dropout" => self.dropout = parse(key, value, line)?,
            "hidden" => self.hidden = parse(key, value, line)?,
            "seed" => self.seed = parse(key, value, line)?,
            "adam_beta1" => self.adam_beta1 = parse(key, value, line)?,
            "adam_beta2" => self.adam_beta2 = parse(key, value, line)?,
            "adam_eps" => self.adam_eps = parse(key, value, line)?,
            _ => return Err(ConfigError::UnknownKey { line, key: key.into() }),
        }
        Ok(())
    }

    pub fn to_config(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "weight_decay = {}", self.weight_decay);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "warmup_fraction = {}", self.warmup_fraction);
        let _ = writeln!(s, "dropout = {}", self.dropout);
        let _ = writeln!(s, "hidden = {}", self.hidden);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "adam_beta1 = {}", self.adam_beta1);
        let _ = writeln!(s, "adam_beta2 = {}", self.adam_beta2);
        let _ = writeln!(s, "adam_eps = {}", self.adam_eps);
        s
    }
}
