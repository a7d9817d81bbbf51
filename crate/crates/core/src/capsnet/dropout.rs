use crate::error::{Error, Result};
use crate::numerics::{RandomStream, Tensor};

use super::config::DropoutStrategy;

/// Primary capsules grouped by channel, each `[capsules, capsule_len]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PrimaryCapsules {
    pub channels: Vec<Tensor>,
}

impl PrimaryCapsules {
    pub fn total(&self) -> usize {
        self.channels.iter().map(|c| c.shape()[0]).sum()
    }

    /// Number of all-zero capsules in each channel.
    pub fn zero_counts(&self) -> Vec<usize> {
        self.channels
            .iter()
            .map(|c| {
                c.data()
                    .chunks_exact(c.shape()[1])
                    .filter(|v| v.iter().all(|&x| x == 0.0))
                    .count()
            })
            .collect()
    }
}

/// Number of whole capsules dropped from a group of `count`.
pub fn drop_count(rate: f64, count: usize) -> usize {
    (rate * count as f64).round() as usize
}

/// Multiplicative masks (0 or `1/(1−rate)`) for each channel, shaped like
/// the channel's capsule tensor.
///
/// `shapes` holds `(capsules, capsule_len)` per channel. Rate 0 and
/// [`DropoutStrategy::None`] return all-ones masks without touching `rng`.
pub fn dropout_masks(
    shapes: &[(usize, usize)],
    strategy: DropoutStrategy,
    rate: f64,
    rng: &mut RandomStream,
) -> Result<Vec<Tensor>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    let keep = 1.0 / (1.0 - rate);
    let mut masks: Vec<Tensor> = shapes
        .iter()
        .map(|&(n, l)| Tensor::full(&[n, l], keep))
        .collect();
    if rate == 0.0 || strategy == DropoutStrategy::None {
        masks.iter_mut().for_each(|m| m.data_mut().fill(1.0));
        return Ok(masks);
    }
    let zero_capsule = |m: &mut Tensor, i: usize| {
        let l = m.shape()[1];
        m.data_mut()[i * l..(i + 1) * l].fill(0.0);
    };
    match strategy {
        DropoutStrategy::None => unreachable!(),
        DropoutStrategy::Scalar => {
            for m in &mut masks {
                for v in m.data_mut() {
                    if rng.uniform() < rate {
                        *v = 0.0;
                    }
                }
            }
        }
        DropoutStrategy::Vector => {
            let total: usize = shapes.iter().map(|s| s.0).sum();
            let mut dropped = rng.sample_indices(total, drop_count(rate, total));
            dropped.sort_unstable();
            let mut offset = 0;
            let mut it = dropped.into_iter().peekable();
            for (m, &(n, _)) in masks.iter_mut().zip(shapes) {
                while let Some(&i) = it.peek() {
                    if i >= offset + n {
                        break;
                    }
                    zero_capsule(m, i - offset);
                    it.next();
                }
                offset += n;
            }
        }
        DropoutStrategy::Capsule => {
            for (m, &(n, _)) in masks.iter_mut().zip(shapes) {
                for i in rng.sample_indices(n, drop_count(rate, n)) {
                    zero_capsule(m, i);
                }
            }
        }
    }
    Ok(masks)
}

/// Applies a dropout strategy to primary capsules (training mode).
pub fn apply_dropout(
    u: &PrimaryCapsules,
    strategy: DropoutStrategy,
    rate: f64,
    rng: &mut RandomStream,
) -> Result<PrimaryCapsules> {
    let shapes: Vec<(usize, usize)> = u
        .channels
        .iter()
        .map(|c| (c.shape()[0], c.shape()[1]))
        .collect();
    let masks = dropout_masks(&shapes, strategy, rate, rng)?;
    let channels = u
        .channels
        .iter()
        .zip(&masks)
        .map(|(c, m)| {
            let data = c.data().iter().zip(m.data()).map(|(a, b)| a * b).collect();
            Tensor::new(c.shape().to_vec(), data)
        })
        .collect::<Result<_>>()?;
    Ok(PrimaryCapsules { channels })
}
