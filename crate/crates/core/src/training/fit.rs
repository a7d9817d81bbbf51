use std::fmt;
use std::str::FromStr;

use crate::capsnet::{
    class_probabilities, forward, forward_on_tape, Mode, ModelConfig, ModelParams,
};
use crate::connectivity::{ConnectivityMatrix, Dataset, Label};
use crate::error::{Error, Result};
use crate::numerics::{NamedTensors, RandomStream, Tape, Tensor};

use super::init::init_params;
use super::loss::{margin_loss_on_tape, LossConfig};

pub const SHUFFLE_STREAM: u64 = 1;
pub const DROPOUT_STREAM: u64 = 2;

/// When to stop before the epoch budget runs out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EarlyStop {
    /// Epoch mean loss below the threshold.
    Absolute,
    /// Change in epoch mean loss below the threshold.
    Delta,
}

impl fmt::Display for EarlyStop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EarlyStop::Absolute => "absolute",
            EarlyStop::Delta => "delta",
        })
    }
}

impl FromStr for EarlyStop {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "absolute" => Ok(EarlyStop::Absolute),
            "delta" => Ok(EarlyStop::Delta),
            other => Err(Error::Config(format!(
                "unknown early_stop_mode {other:?}; expected absolute or delta"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Optimizer {
    /// Plain mini-batch gradient descent.
    Sgd,
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("sgd")
    }
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sgd" => Ok(Optimizer::Sgd),
            other => Err(Error::Config(format!(
                "unknown optimizer {other:?}; expected sgd"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub early_stop_threshold: f64,
    pub early_stop: EarlyStop,
    pub shuffle: bool,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            learning_rate: 0.01,
            batch_size: 3,
            early_stop_threshold: 0.008,
            early_stop: EarlyStop::Absolute,
            shuffle: true,
            optimizer: Optimizer::Sgd,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.early_stop_threshold >= 0.0) {
            return Err(Error::Config(
                "early_stop_threshold must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Per-epoch mean training loss.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epoch_losses: Vec<f64>,
    pub stopped_early: bool,
}

/// Sizes of the mini-batches one epoch over `n` samples produces.
pub fn batch_sizes(n: usize, batch_size: usize) -> Vec<usize> {
    (0..n)
        .step_by(batch_size)
        .map(|start| batch_size.min(n - start))
        .collect()
}

/// Mean margin loss and its gradient over `batch`.
pub fn batch_gradient(
    params: &ModelParams,
    config: &ModelConfig,
    loss_cfg: &LossConfig,
    batch: &[(&ConnectivityMatrix, Label)],
    mode: Mode,
    rng: &mut RandomStream,
) -> Result<(f64, NamedTensors)> {
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut grads: Option<NamedTensors> = None;
    for (matrix, label) in batch {
        let mut tape = Tape::new();
        let nodes = forward_on_tape(&mut tape, params, config, matrix, mode, rng)?;
        let loss = margin_loss_on_tape(&mut tape, nodes.lengths, label.index(), loss_cfg)?;
        let value = tape.value(loss).item().expect("scalar loss");
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss {value}")));
        }
        total += value;
        let g = tape.backward(loss, scale)?;
        match grads.as_mut() {
            None => grads = Some(g),
            Some(acc) => {
                for (name, t) in acc.iter_mut() {
                    t.axpy(1.0, g.get(name).expect("same parameter set"));
                }
            }
        }
    }
    Ok((total * scale, grads.unwrap_or_default()))
}

/// Trains a fresh model on `data`.
pub fn fit(
    data: &Dataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    loss_cfg: &LossConfig,
) -> Result<(ModelParams, TrainHistory)> {
    let params = init_params(model_cfg, train_cfg.seed)?;
    fit_from(params, data, model_cfg, train_cfg, loss_cfg)
}

/// Trains starting from `params`.
pub fn fit_from(
    mut params: ModelParams,
    data: &Dataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    loss_cfg: &LossConfig,
) -> Result<(ModelParams, TrainHistory)> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    loss_cfg.validate()?;
    data.ensure_trainable()?;
    if data.n_rois() != Some(model_cfg.n_rois) {
        return Err(Error::Shape(format!(
            "input layer: data is {0}x{0} but the model expects {1}x{1}",
            data.n_rois().unwrap_or(0),
            model_cfg.n_rois
        )));
    }

    let mut shuffle_rng = RandomStream::new(train_cfg.seed, SHUFFLE_STREAM);
    let mut dropout_rng = RandomStream::new(train_cfg.seed, DROPOUT_STREAM);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = TrainHistory::default();

    for epoch in 0..train_cfg.epochs {
        if train_cfg.shuffle {
            shuffle_rng.shuffle(&mut order);
        }
        let mut epoch_total = 0.0;
        for (b, chunk) in order.chunks(train_cfg.batch_size).enumerate() {
            let batch: Vec<(&ConnectivityMatrix, Label)> = chunk
                .iter()
                .map(|&i| (&data.samples[i].matrix, data.samples[i].label))
                .collect();
            let (loss, grads) = batch_gradient(
                &params,
                model_cfg,
                loss_cfg,
                &batch,
                Mode::Train,
                &mut dropout_rng,
            )
            .map_err(|e| match e {
                Error::NonFinite(d) => Error::NonFinite(format!("epoch {epoch} batch {b}: {d}")),
                other => other,
            })?;
            epoch_total += loss * chunk.len() as f64;
            match train_cfg.optimizer {
                Optimizer::Sgd => params.sgd_step(&grads, train_cfg.learning_rate),
            }
        }
        let mean = epoch_total / data.len() as f64;
        let prev = history.epoch_losses.last().copied();
        history.epoch_losses.push(mean);
        if !params.is_finite() {
            return Err(Error::NonFinite(format!("parameters after epoch {epoch}")));
        }
        let stop = match train_cfg.early_stop {
            EarlyStop::Absolute => mean < train_cfg.early_stop_threshold,
            EarlyStop::Delta => {
                prev.is_some_and(|p| (p - mean).abs() < train_cfg.early_stop_threshold)
            }
        };
        if stop {
            history.stopped_early = true;
            break;
        }
    }
    Ok((params, history))
}

/// Capsule lengths and predicted class for one matrix (inference mode).
pub fn predict(
    params: &ModelParams,
    config: &ModelConfig,
    matrix: &ConnectivityMatrix,
) -> Result<(Vec<f64>, Label)> {
    let out = forward(
        params,
        config,
        matrix,
        Mode::Infer,
        &mut RandomStream::new(0, 0),
    )?;
    let (lengths, cls) = class_probabilities(&out.class_capsules);
    let label = Label::from_index(cls)
        .ok_or_else(|| Error::Contract(format!("class index {cls} has no label")))?;
    Ok((lengths, label))
}

/// Sum of squared differences between two parameter sets.
pub fn param_distance(a: &ModelParams, b: &ModelParams) -> f64 {
    a.tensors()
        .iter()
        .map(|(name, t)| {
            let o: &Tensor = b.get(name).expect("same layout");
            t.data()
                .iter()
                .zip(o.data())
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connectivity::{generate_synthetic, SynthSpec};

    fn tiny_data(seed: u64) -> Dataset {
        generate_synthetic(&SynthSpec {
            n_rois: 8,
            n_per_class: 6,
            n_timepoints: 60,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn cohort_batches() {
        let b = batch_sizes(131, 3);
        assert_eq!(b.len(), 44);
        assert_eq!(b.iter().filter(|&&s| s == 3).count(), 43);
        assert_eq!(*b.last().unwrap(), 2);
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let data = tiny_data(1);
        let cfg = ModelConfig::tiny();
        let tc = TrainConfig {
            epochs: 3,
            learning_rate: 0.0,
            seed: 4,
            ..Default::default()
        };
        let (params, history) = fit(&data, &cfg, &tc, &LossConfig::default()).unwrap();
        assert_eq!(params, init_params(&cfg, 4).unwrap());
        assert_eq!(history.epoch_losses.len(), 3);
    }

    #[test]
    fn fit_is_deterministic() {
        let data = tiny_data(2);
        let cfg = ModelConfig::tiny();
        let tc = TrainConfig {
            epochs: 3,
            seed: 8,
            ..Default::default()
        };
        let a = fit(&data, &cfg, &tc, &LossConfig::default()).unwrap();
        let b = fit(&data, &cfg, &tc, &LossConfig::default()).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn one_class_rejected() {
        let mut data = tiny_data(3);
        data.samples.retain(|s| s.label == Label::Sz);
        let err = fit(
            &data,
            &ModelConfig::tiny(),
            &TrainConfig::default(),
            &LossConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Dataset(_)), "{err}");
    }

    #[test]
    fn early_stop_fires_on_absolute_threshold() {
        let data = tiny_data(4);
        let tc = TrainConfig {
            epochs: 5,
            early_stop_threshold: 1e9,
            ..Default::default()
        };
        let (_, h) = fit(&data, &ModelConfig::tiny(), &tc, &LossConfig::default()).unwrap();
        assert_eq!(h.epoch_losses.len(), 1);
        assert!(h.stopped_early);
    }
}
