use crate::error::{CheckpointError, Result};
use crate::numerics::{NamedTensors, Tensor};

use super::config::ModelConfig;

pub const CLASS_WEIGHT: &str = "class.weight";

pub fn conv_weight(c: usize) -> String {
    format!("conv{c}.weight")
}

pub fn conv_bias(c: usize) -> String {
    format!("conv{c}.bias")
}

pub fn primary_weight(c: usize) -> String {
    format!("primary{c}.weight")
}

pub fn primary_bias(c: usize) -> String {
    format!("primary{c}.bias")
}

/// Learnable tensor names and shapes implied by a configuration, in
/// canonical order.
pub fn expected_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let f = config.n_filters;
    let sl = config.n_slices * config.capsule_len;
    let mut out = Vec::new();
    for (c, ch) in config.channels().iter().enumerate() {
        out.push((conv_weight(c), vec![f, ch.kernel_h, ch.kernel_w]));
        if config.use_bias {
            out.push((conv_bias(c), vec![f]));
        }
        out.push((primary_weight(c), vec![f, sl]));
        if config.use_bias {
            out.push((primary_bias(c), vec![sl]));
        }
    }
    out.push((
        CLASS_WEIGHT.to_string(),
        vec![
            config.transform_group_count(),
            config.n_classes,
            config.capsule_len,
            config.capsule_len,
        ],
    ));
    out
}

/// All learnable weights of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    tensors: NamedTensors,
}

impl ModelParams {
    /// Wraps `tensors` after checking names and shapes against `config`.
    pub fn from_tensors(config: &ModelConfig, tensors: NamedTensors) -> Result<Self> {
        let expected = expected_shapes(config);
        for (name, shape) in &expected {
            let t = tensors
                .get(name)
                .ok_or_else(|| CheckpointError::MissingTensor(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(CheckpointError::ShapeDisagreement {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: t.shape().to_vec(),
                }
                .into());
            }
        }
        if let Some(extra) = tensors
            .names()
            .find(|n| !expected.iter().any(|(e, _)| e == n))
        {
            return Err(CheckpointError::UnexpectedTensor(extra.to_string()).into());
        }
        let mut ordered = NamedTensors::new();
        for (name, _) in expected {
            ordered.insert(
                name.clone(),
                tensors.get(&name).expect("checked above").clone(),
            );
        }
        Ok(Self { tensors: ordered })
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        let mut tensors = NamedTensors::new();
        for (name, shape) in expected_shapes(config) {
            tensors.insert(name, Tensor::zeros(&shape));
        }
        Self { tensors }
    }

    pub fn tensors(&self) -> &NamedTensors {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut NamedTensors {
        &mut self.tensors
    }

    pub fn into_tensors(self) -> NamedTensors {
        self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn numel(&self) -> usize {
        self.tensors.numel()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|(_, t)| t.is_finite())
    }

    /// `θ ← θ − lr · g` for every tensor named in `grads`.
    pub fn sgd_step(&mut self, grads: &NamedTensors, lr: f64) {
        for (name, t) in self.tensors.iter_mut() {
            if let Some(g) = grads.get(name) {
                t.axpy(-lr, g);
            }
        }
    }
}
