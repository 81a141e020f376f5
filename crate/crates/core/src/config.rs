//! Run configuration: defaults, `key=value` config files, environment and
//! explicit overrides, applied in that order.

use std::fmt;
use std::path::Path;

use crate::candgen::CandidateOptions;
use crate::contrastive::LossMode;
use crate::error::{Error, Result};
use crate::numkernel::AdamWConfig;
use crate::train::TrainConfig;

pub const ENV_PREFIX: &str = "DIMLINK_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TiePolicy {
    /// Non-gold candidates tied with the gold entity rank ahead of it.
    #[default]
    Pessimistic,
}

impl fmt::Display for TiePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("pessimistic")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub hidden_dim: usize,
    pub heads: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss_mode: LossMode,
    pub seed: u64,
    pub candidate_k: usize,
    pub inject_gold: bool,
    pub tie_policy: TiePolicy,
    /// Maximum entity representation length, in characters, handed to the encoder.
    pub truncation_budget: usize,
    pub fuse_mention: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let adam = AdamWConfig::default();
        RunConfig {
            hidden_dim: 512,
            heads: 8,
            learning_rate: adam.lr,
            batch_size: 64,
            epochs: 300,
            loss_mode: LossMode::Standard,
            seed: 0,
            candidate_k: 100,
            inject_gold: true,
            tie_policy: TiePolicy::Pessimistic,
            truncation_budget: 512,
            fuse_mention: false,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            weight_decay: adam.weight_decay,
        }
    }
}

pub const KEYS: [&str; 16] = [
    "hidden_dim",
    "heads",
    "learning_rate",
    "batch_size",
    "epochs",
    "loss_mode",
    "seed",
    "candidate_k",
    "inject_gold",
    "tie_policy",
    "truncation_budget",
    "fuse_mention",
    "beta1",
    "beta2",
    "eps",
    "weight_decay",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Configuration(format!("{key}={value}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Configuration(format!("{key}={value}: expected a boolean"))),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "loss_mode" => self.loss_mode = value.parse()?,
            "seed" => self.seed = parse(key, value)?,
            "candidate_k" => self.candidate_k = parse(key, value)?,
            "inject_gold" => self.inject_gold = parse_bool(key, value)?,
            "tie_policy" => {
                if value != "pessimistic" {
                    return Err(Error::Configuration(format!(
                        "tie_policy={value}: only pessimistic is supported"
                    )));
                }
                self.tie_policy = TiePolicy::Pessimistic;
            }
            "truncation_budget" => self.truncation_budget = parse(key, value)?,
            "fuse_mention" => self.fuse_mention = parse_bool(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "eps" => self.eps = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            other => return Err(Error::Configuration(format!("unknown config key {other}"))),
        }
        Ok(())
    }

    /// Apply a `key=value` file. Blank lines and `#` comments are skipped.
    pub fn apply_str(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Configuration(format!("{origin}:{}: expected key=value", i + 1))
            })?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Configuration(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_str(&text, &path.display().to_string())
    }

    /// Apply `DIMLINK_<KEY>` variables from `vars`.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
        for (name, value) in vars {
            let Some(key) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let key = key.to_ascii_lowercase();
            if KEYS.contains(&key.as_str()) {
                self.set(&key, &value)?;
            }
        }
        Ok(())
    }

    /// Defaults, then environment, then file, then explicit overrides.
    pub fn resolve(
        env: impl IntoIterator<Item = (String, String)>,
        file: Option<&Path>,
        overrides: &[(&str, String)],
    ) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_env(env)?;
        if let Some(f) = file {
            cfg.apply_file(f)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.hidden_dim == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
            return Err(Error::Configuration(format!(
                "hidden_dim {} must be a positive multiple of heads {}",
                self.hidden_dim, self.heads
            )));
        }
        if self.batch_size == 0 || self.candidate_k == 0 {
            return Err(Error::Configuration("batch_size and candidate_k must be at least 1".into()));
        }
        self.optimizer().validate()
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            dim: self.hidden_dim,
            heads: self.heads,
            batch_size: self.batch_size,
            epochs: self.epochs,
            loss_mode: self.loss_mode,
            seed: self.seed,
            fuse_mention: self.fuse_mention,
            optimizer: self.optimizer(),
        }
    }

    pub fn candidate_options(&self) -> CandidateOptions {
        CandidateOptions {
            k: self.candidate_k,
            inject_gold: self.inject_gold,
        }
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "hidden_dim" => self.hidden_dim.to_string(),
            "heads" => self.heads.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "loss_mode" => self.loss_mode.to_string(),
            "seed" => self.seed.to_string(),
            "candidate_k" => self.candidate_k.to_string(),
            "inject_gold" => self.inject_gold.to_string(),
            "tie_policy" => self.tie_policy.to_string(),
            "truncation_budget" => self.truncation_budget.to_string(),
            "fuse_mention" => self.fuse_mention.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "eps" => self.eps.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }
}

/// The resolved configuration in config-file syntax, one key per line.
impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for key in KEYS {
            writeln!(f, "{key}={}", self.value_of(key))?;
        }
        Ok(())
    }
}

/// Cut `text` to at most `budget` characters.
pub fn truncate_chars(text: &str, budget: usize) -> &str {
    match text.char_indices().nth(budget) {
        Some((idx, _)) => &text[..idx],
        None => text,
    }
}
