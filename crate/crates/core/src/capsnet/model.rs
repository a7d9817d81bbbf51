use std::rc::Rc;

use crate::connectivity::ConnectivityMatrix;
use crate::error::{Error, Result};
use crate::numerics::{NodeId, RandomStream, Tape, Tensor};

use super::config::{Mode, ModelConfig};
use super::dropout::{dropout_masks, PrimaryCapsules};
use super::params::{self, ModelParams};
use super::routing::{route, RoutingState};

/// Node ids of the recorded forward pass.
#[derive(Clone, Debug)]
pub struct ForwardNodes {
    /// `[n_classes, capsule_len]`.
    pub class_capsules: NodeId,
    /// `[n_classes]` capsule lengths.
    pub lengths: NodeId,
    /// Squashed primary capsules after dropout, one node per channel.
    pub primary: Vec<NodeId>,
    pub routing: RoutingState,
}

/// Result of a standalone forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub class_capsules: Tensor,
    pub lengths: Vec<f64>,
    pub primary: PrimaryCapsules,
    pub routing: RoutingState,
}

impl Forward {
    pub fn predicted_class(&self) -> usize {
        argmax_lower(&self.lengths)
    }
}

fn layer_err(layer: &str, detail: String) -> Error {
    Error::Shape(format!("{layer}: {detail}"))
}

/// Records the full network on `tape`, registering every tensor of
/// `params` as a learnable leaf.
pub fn forward_on_tape(
    tape: &mut Tape,
    params: &ModelParams,
    config: &ModelConfig,
    matrix: &ConnectivityMatrix,
    mode: Mode,
    rng: &mut RandomStream,
) -> Result<ForwardNodes> {
    if matrix.n() != config.n_rois {
        return Err(layer_err(
            "input layer",
            format!(
                "matrix is {0}x{0} but the model expects {1}x{1}",
                matrix.n(),
                config.n_rois
            ),
        ));
    }
    let ids = tape.params(params.tensors())?;
    let node = |name: &str| -> Result<NodeId> {
        params
            .tensors()
            .names()
            .position(|n| n == name)
            .map(|i| ids[i])
            .ok_or_else(|| layer_err("parameters", format!("missing tensor {name}")))
    };

    let input = tape.constant(matrix.values().clone());
    let l = config.capsule_len;
    let mut channel_caps = Vec::new();
    for (c, ch) in config.channels().iter().enumerate() {
        let bias = config
            .use_bias
            .then(|| node(&params::conv_bias(c)))
            .transpose()?;
        let mut features = tape
            .conv2d(input, node(&params::conv_weight(c))?, bias)
            .map_err(|e| layer_err(&format!("convolution channel {c}"), e.to_string()))?;
        if config.conv_activation {
            features = tape.relu(features)?;
        }
        let mut projected = tape
            .matmul(features, node(&params::primary_weight(c))?)
            .map_err(|e| layer_err(&format!("primary capsule channel {c}"), e.to_string()))?;
        if config.use_bias {
            projected = tape.add_bias(projected, node(&params::primary_bias(c))?)?;
        }
        let caps = tape.reshape(projected, vec![ch.positions() * config.n_slices, l])?;
        channel_caps.push(tape.squash_rows(caps)?);
    }

    if mode == Mode::Train && config.dropout_rate > 0.0 {
        let shapes: Vec<(usize, usize)> = channel_caps
            .iter()
            .map(|&n| (tape.shape(n)[0], l))
            .collect();
        let masks = dropout_masks(&shapes, config.dropout_strategy, config.dropout_rate, rng)?;
        for (caps, mask) in channel_caps.iter_mut().zip(masks) {
            *caps = tape.mul_const(*caps, mask)?;
        }
    }

    let lower = tape.concat_rows(channel_caps.clone())?;
    let groups: Rc<[usize]> = config.transform_groups().into();
    let predictions = tape
        .capsule_transform(node(params::CLASS_WEIGHT)?, lower, groups)
        .map_err(|e| layer_err("class capsule layer", e.to_string()))?;
    let (class_capsules, routing) = route(tape, predictions, config.routing_iterations)?;
    let lengths = tape.row_norms(class_capsules)?;
    Ok(ForwardNodes {
        class_capsules,
        lengths,
        primary: channel_caps,
        routing,
    })
}

/// Runs the network on one matrix.
pub fn forward(
    params: &ModelParams,
    config: &ModelConfig,
    matrix: &ConnectivityMatrix,
    mode: Mode,
    rng: &mut RandomStream,
) -> Result<Forward> {
    let mut tape = Tape::new();
    let nodes = forward_on_tape(&mut tape, params, config, matrix, mode, rng)?;
    Ok(Forward {
        class_capsules: tape.value(nodes.class_capsules).clone(),
        lengths: tape.value(nodes.lengths).data().to_vec(),
        primary: PrimaryCapsules {
            channels: nodes
                .primary
                .iter()
                .map(|&n| tape.value(n).clone())
                .collect(),
        },
        routing: nodes.routing,
    })
}

fn argmax_lower(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Capsule lengths and the predicted class (ties go to the lower index).
pub fn class_probabilities(class_capsules: &Tensor) -> (Vec<f64>, usize) {
    let l = class_capsules.shape().last().copied().unwrap_or(1);
    let lengths: Vec<f64> = class_capsules
        .data()
        .chunks_exact(l)
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let cls = argmax_lower(&lengths);
    (lengths, cls)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capsnet::DropoutStrategy;
    use crate::training::init_params;

    fn random_matrix(n: usize, rng: &mut RandomStream) -> ConnectivityMatrix {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in i + 1..n {
                let v = 0.5 * rng.normal();
                t.data_mut()[i * n + j] = v;
                t.data_mut()[j * n + i] = v;
            }
        }
        ConnectivityMatrix::new(t, None).unwrap()
    }

    #[test]
    fn default_config_shapes() {
        let cfg = ModelConfig::default();
        let params = init_params(&cfg, 1).unwrap();
        let mut rng = RandomStream::new(1, 0);
        let m = random_matrix(116, &mut rng);
        let out = forward(&params, &cfg, &m, Mode::Train, &mut rng).unwrap();
        let sizes: Vec<usize> = out.primary.channels.iter().map(|c| c.shape()[0]).collect();
        assert_eq!(sizes, [1160, 1130, 1110, 1100, 1080, 1020]);
        assert_eq!(out.primary.total(), 6600);
        assert_eq!(out.class_capsules.shape(), &[2, 20]);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_capsules() {
        let cfg = ModelConfig::tiny();
        let params = init_params(&cfg, 2).unwrap();
        let m = ConnectivityMatrix::new(Tensor::zeros(&[8, 8]), None).unwrap();
        let mut rng = RandomStream::new(0, 0);
        let out = forward(&params, &cfg, &m, Mode::Infer, &mut rng).unwrap();
        assert!(out
            .primary
            .channels
            .iter()
            .all(|c| c.data().iter().all(|&v| v == 0.0)));
        assert_eq!(out.lengths, vec![0.0, 0.0]);
    }

    #[test]
    fn inference_is_deterministic() {
        let cfg = ModelConfig::tiny();
        let params = init_params(&cfg, 3).unwrap();
        let mut rng = RandomStream::new(3, 0);
        let m = random_matrix(8, &mut rng);
        let a = forward(&params, &cfg, &m, Mode::Infer, &mut RandomStream::new(1, 0)).unwrap();
        let b = forward(&params, &cfg, &m, Mode::Infer, &mut RandomStream::new(2, 0)).unwrap();
        assert_eq!(a.class_capsules, b.class_capsules);
    }

    #[test]
    fn train_mode_applies_capsule_dropout() {
        let cfg = ModelConfig::tiny();
        let params = init_params(&cfg, 4).unwrap();
        let mut rng = RandomStream::new(4, 0);
        let m = random_matrix(8, &mut rng);
        let out = forward(&params, &cfg, &m, Mode::Train, &mut rng).unwrap();
        // channels hold 16 and 14 capsules
        assert!(out.primary.zero_counts()[0] >= 8);
        assert!(out.primary.zero_counts()[1] >= 7);
        let none = ModelConfig {
            dropout_strategy: DropoutStrategy::None,
            ..cfg
        };
        let out = forward(&params, &none, &m, Mode::Train, &mut rng).unwrap();
        assert_eq!(out.lengths.len(), 2);
    }

    #[test]
    fn dimension_mismatch_names_layer() {
        let cfg = ModelConfig::tiny();
        let params = init_params(&cfg, 5).unwrap();
        let m = ConnectivityMatrix::new(Tensor::zeros(&[9, 9]), None).unwrap();
        let err =
            forward(&params, &cfg, &m, Mode::Infer, &mut RandomStream::new(0, 0)).unwrap_err();
        assert!(err.to_string().contains("input layer"), "{err}");
    }

    #[test]
    fn class_probability_ties_and_scaling() {
        let v = Tensor::from_rows(&[vec![0.9, 0.0], vec![0.1, 0.0]]).unwrap();
        assert_eq!(class_probabilities(&v).1, 0);
        let tie = Tensor::from_rows(&[vec![0.4, 0.0], vec![0.0, 0.4]]).unwrap();
        assert_eq!(class_probabilities(&tie).1, 0);
        let v = Tensor::from_rows(&[vec![0.1, 0.2], vec![0.3, -0.4]]).unwrap();
        let (_, cls) = class_probabilities(&v);
        let mut scaled = v.clone();
        scaled.scale(1.5);
        assert_eq!(class_probabilities(&scaled).1, cls);
    }
}
