//! Flat `key = value` configuration files.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::capsnet::ModelConfig;
use crate::error::{Error, Result};
use crate::training::{LossConfig, TrainConfig};

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {}: expected `key = value`, got {line:?}",
                i + 1
            ))
        })?;
        let key = k.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        out.push((key.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_value<T: FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: expected {what}, got {value:?}")))
}

fn parse_token<T: FromStr<Err = Error>>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|e: Error| match e {
        Error::Config(m) => Error::Config(format!("{key}: {m}")),
        other => other,
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got {value:?}"
        ))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|v| parse_value(key, v.trim(), "a comma-separated list of integers"))
        .collect()
}

pub const MODEL_KEYS: &[&str] = &[
    "n_rois",
    "kernel_type",
    "kernel_widths",
    "n_filters",
    "n_slices",
    "capsule_len",
    "n_classes",
    "routing_iterations",
    "conv_activation",
    "dropout_strategy",
    "dropout_rate",
    "weight_sharing",
    "use_bias",
];

pub const TRAIN_KEYS: &[&str] = &[
    "epochs",
    "learning_rate",
    "batch_size",
    "early_stop_threshold",
    "early_stop_mode",
    "shuffle",
    "optimizer",
];

pub const LOSS_KEYS: &[&str] = &["m_plus", "m_minus", "lambda", "loss_norm"];

/// Sets one model key. Returns `false` if `key` is not a model key.
pub fn apply_model_key(cfg: &mut ModelConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "n_rois" => cfg.n_rois = parse_value(key, value, "an integer")?,
        "kernel_type" => cfg.kernel_type = parse_token(key, value)?,
        "kernel_widths" => cfg.kernel_widths = parse_list(key, value)?,
        "n_filters" => cfg.n_filters = parse_value(key, value, "an integer")?,
        "n_slices" => cfg.n_slices = parse_value(key, value, "an integer")?,
        "capsule_len" => cfg.capsule_len = parse_value(key, value, "an integer")?,
        "n_classes" => cfg.n_classes = parse_value(key, value, "an integer")?,
        "routing_iterations" => cfg.routing_iterations = parse_value(key, value, "an integer")?,
        "conv_activation" => cfg.conv_activation = parse_bool(key, value)?,
        "dropout_strategy" => cfg.dropout_strategy = parse_token(key, value)?,
        "dropout_rate" => cfg.dropout_rate = parse_value(key, value, "a number")?,
        "weight_sharing" => cfg.weight_sharing = parse_token(key, value)?,
        "use_bias" => cfg.use_bias = parse_bool(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

pub fn apply_train_key(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "epochs" => cfg.epochs = parse_value(key, value, "an integer")?,
        "learning_rate" => cfg.learning_rate = parse_value(key, value, "a number")?,
        "batch_size" => cfg.batch_size = parse_value(key, value, "an integer")?,
        "early_stop_threshold" => cfg.early_stop_threshold = parse_value(key, value, "a number")?,
        "early_stop_mode" => cfg.early_stop = parse_token(key, value)?,
        "shuffle" => cfg.shuffle = parse_bool(key, value)?,
        "optimizer" => cfg.optimizer = parse_token(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

pub fn apply_loss_key(cfg: &mut LossConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "m_plus" => cfg.m_plus = parse_value(key, value, "a number")?,
        "m_minus" => cfg.m_minus = parse_value(key, value, "a number")?,
        "lambda" => cfg.lambda = parse_value(key, value, "a number")?,
        "loss_norm" => cfg.norm = parse_token(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

pub fn model_config_string(cfg: &ModelConfig) -> String {
    let widths: Vec<String> = cfg.kernel_widths.iter().map(usize::to_string).collect();
    let mut s = String::new();
    let _ = writeln!(s, "n_rois = {}", cfg.n_rois);
    let _ = writeln!(s, "kernel_type = {}", cfg.kernel_type);
    let _ = writeln!(s, "kernel_widths = {}", widths.join(","));
    let _ = writeln!(s, "n_filters = {}", cfg.n_filters);
    let _ = writeln!(s, "n_slices = {}", cfg.n_slices);
    let _ = writeln!(s, "capsule_len = {}", cfg.capsule_len);
    let _ = writeln!(s, "n_classes = {}", cfg.n_classes);
    let _ = writeln!(s, "routing_iterations = {}", cfg.routing_iterations);
    let _ = writeln!(s, "conv_activation = {}", cfg.conv_activation);
    let _ = writeln!(s, "dropout_strategy = {}", cfg.dropout_strategy);
    let _ = writeln!(s, "dropout_rate = {}", cfg.dropout_rate);
    let _ = writeln!(s, "weight_sharing = {}", cfg.weight_sharing);
    let _ = writeln!(s, "use_bias = {}", cfg.use_bias);
    s
}

pub fn train_config_string(cfg: &TrainConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "epochs = {}", cfg.epochs);
    let _ = writeln!(s, "learning_rate = {}", cfg.learning_rate);
    let _ = writeln!(s, "batch_size = {}", cfg.batch_size);
    let _ = writeln!(s, "early_stop_threshold = {}", cfg.early_stop_threshold);
    let _ = writeln!(s, "early_stop_mode = {}", cfg.early_stop);
    let _ = writeln!(s, "shuffle = {}", cfg.shuffle);
    let _ = writeln!(s, "optimizer = {}", cfg.optimizer);
    s
}

pub fn loss_config_string(cfg: &LossConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "m_plus = {}", cfg.m_plus);
    let _ = writeln!(s, "m_minus = {}", cfg.m_minus);
    let _ = writeln!(s, "lambda = {}", cfg.lambda);
    let _ = writeln!(s, "loss_norm = {}", cfg.norm);
    s
}

/// Model, training, and loss settings resolved from defaults, an optional
/// file, and flags (in increasing precedence).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    /// Keys set explicitly rather than left at their defaults.
    pub explicit: BTreeSet<String>,
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let known = apply_model_key(&mut self.model, key, value)?
            || apply_train_key(&mut self.train, key, value)?
            || apply_loss_key(&mut self.loss, key, value)?;
        if !known {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    /// Parses `text` over the built-in defaults and range-checks the result.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (k, v) in key_values(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.loss.validate()
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn to_config_string(&self) -> String {
        format!(
            "{}{}{}",
            model_config_string(&self.model),
            train_config_string(&self.train),
            loss_config_string(&self.loss)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capsnet::{DropoutStrategy, KernelType};
    use crate::training::{EarlyStop, LossNorm};

    #[test]
    fn comments_and_blank_lines() {
        let kv = key_values("# header\n\n a = 1 # trailing\nb=two\n").unwrap();
        assert_eq!(
            kv,
            vec![("a".into(), "1".into()), ("b".into(), "two".into())]
        );
        assert!(key_values("novalue\n").is_err());
    }

    #[test]
    fn roundtrip() {
        let mut cfg = RunConfig::default();
        cfg.model.n_rois = 16;
        cfg.model.kernel_type = KernelType::Square;
        cfg.model.kernel_widths = vec![15];
        cfg.model.dropout_strategy = DropoutStrategy::Vector;
        cfg.model.dropout_rate = 0.3;
        cfg.train.learning_rate = 0.05;
        cfg.train.early_stop = EarlyStop::Delta;
        cfg.loss.norm = LossNorm::L1;
        let back = RunConfig::parse(&cfg.to_config_string()).unwrap();
        assert_eq!(back.model, cfg.model);
        assert_eq!(back.train, cfg.train);
        assert_eq!(back.loss, cfg.loss);
    }

    #[test]
    fn unknown_key_named() {
        let err = RunConfig::parse("n_rois = 16\nlearnig_rate = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("learnig_rate"), "{err}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn range_checked() {
        assert!(RunConfig::parse("dropout_rate = 1.0").is_err());
        assert!(RunConfig::parse("batch_size = 0").is_err());
        assert!(RunConfig::parse("m_plus = 0.05").is_err());
        assert!(RunConfig::parse("kernel_widths = 1,x").is_err());
    }

    #[test]
    fn explicit_keys_tracked() {
        let cfg = RunConfig::parse("n_rois = 16\n").unwrap();
        assert!(cfg.is_explicit("n_rois"));
        assert!(!cfg.is_explicit("epochs"));
    }
}
