use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How layer-1 kernels span the connectivity matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelType {
    /// Full-height `n_rois × k` kernels sliding along columns.
    Column,
    /// `k × k` kernels, valid stride-1 convolution in both directions.
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropoutStrategy {
    None,
    /// Independent per-element dropout.
    Scalar,
    /// Whole capsules, count fixed over the pooled channels.
    Vector,
    /// Whole capsules, count fixed per channel.
    Capsule,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightSharing {
    /// One transform per (lower capsule, class).
    PerPair,
    /// One transform per (channel, slice, class), shared across positions.
    PerSlice,
}

macro_rules! token_enum {
    ($ty:ty, $what:literal, [$($variant:path => $tok:literal),+ $(,)?]) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $tok),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($tok => Ok($variant),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", $what, " {:?}; expected one of {}"),
                        other,
                        [$($tok),+].join(", ")
                    ))),
                }
            }
        }
    };
}

token_enum!(KernelType, "kernel type", [KernelType::Column => "column", KernelType::Square => "square"]);
token_enum!(DropoutStrategy, "dropout strategy", [
    DropoutStrategy::None => "none",
    DropoutStrategy::Scalar => "scalar",
    DropoutStrategy::Vector => "vector",
    DropoutStrategy::Capsule => "capsule",
]);
token_enum!(WeightSharing, "weight sharing", [
    WeightSharing::PerPair => "per-pair",
    WeightSharing::PerSlice => "per-slice",
]);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Architecture of the multi-kernel capsule network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub n_rois: usize,
    pub kernel_type: KernelType,
    pub kernel_widths: Vec<usize>,
    pub n_filters: usize,
    pub n_slices: usize,
    pub capsule_len: usize,
    pub n_classes: usize,
    pub routing_iterations: usize,
    /// Rectifier after the convolution.
    pub conv_activation: bool,
    pub dropout_strategy: DropoutStrategy,
    pub dropout_rate: f64,
    pub weight_sharing: WeightSharing,
    /// Convolution and primary-capsule biases.
    pub use_bias: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_rois: 116,
            kernel_type: KernelType::Column,
            kernel_widths: vec![1, 4, 6, 7, 9, 15],
            n_filters: 64,
            n_slices: 10,
            capsule_len: 20,
            n_classes: 2,
            routing_iterations: 3,
            conv_activation: true,
            dropout_strategy: DropoutStrategy::Capsule,
            dropout_rate: 0.5,
            weight_sharing: WeightSharing::PerPair,
            use_bias: true,
        }
    }
}

/// Shape of one kernel-width channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Channel {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Channel {
    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

impl ModelConfig {
    /// 8 ROIs, kernels {1, 2}, 4 filters, 2 slices, capsule length 3.
    pub fn tiny() -> Self {
        Self {
            n_rois: 8,
            kernel_widths: vec![1, 2],
            n_filters: 4,
            n_slices: 2,
            capsule_len: 3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_rois == 0 {
            return fail("n_rois must be positive".into());
        }
        if self.kernel_widths.is_empty() {
            return fail("at least one kernel width is required".into());
        }
        if let Some(k) = self
            .kernel_widths
            .iter()
            .find(|&&k| k == 0 || k > self.n_rois)
        {
            return fail(format!("kernel width {k} outside 1..={}", self.n_rois));
        }
        if self.n_filters == 0 || self.n_slices == 0 || self.capsule_len == 0 {
            return fail("n_filters, n_slices and capsule_len must be positive".into());
        }
        if self.n_classes < 2 {
            return fail(format!(
                "n_classes must be at least 2, got {}",
                self.n_classes
            ));
        }
        if self.routing_iterations == 0 {
            return fail("routing_iterations must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        Ok(())
    }

    pub fn channels(&self) -> Vec<Channel> {
        self.kernel_widths
            .iter()
            .map(|&k| match self.kernel_type {
                KernelType::Column => Channel {
                    kernel_h: self.n_rois,
                    kernel_w: k,
                    out_h: 1,
                    out_w: self.n_rois - k + 1,
                },
                KernelType::Square => Channel {
                    kernel_h: k,
                    kernel_w: k,
                    out_h: self.n_rois - k + 1,
                    out_w: self.n_rois - k + 1,
                },
            })
            .collect()
    }

    /// Primary capsules per channel: positions × slices.
    pub fn capsules_per_channel(&self) -> Vec<usize> {
        self.channels()
            .iter()
            .map(|c| c.positions() * self.n_slices)
            .collect()
    }

    pub fn total_capsules(&self) -> usize {
        self.capsules_per_channel().iter().sum()
    }

    /// Transform-matrix index for each lower capsule.
    pub fn transform_groups(&self) -> Vec<usize> {
        let mut groups = Vec::with_capacity(self.total_capsules());
        for (c, ch) in self.channels().iter().enumerate() {
            for _pos in 0..ch.positions() {
                for s in 0..self.n_slices {
                    groups.push(match self.weight_sharing {
                        WeightSharing::PerPair => groups.len(),
                        WeightSharing::PerSlice => c * self.n_slices + s,
                    });
                }
            }
        }
        groups
    }

    pub fn transform_group_count(&self) -> usize {
        match self.weight_sharing {
            WeightSharing::PerPair => self.total_capsules(),
            WeightSharing::PerSlice => self.kernel_widths.len() * self.n_slices,
        }
    }

    /// `(channel, slice, position)` for each lower capsule.
    pub fn capsule_coordinates(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::with_capacity(self.total_capsules());
        for (c, ch) in self.channels().iter().enumerate() {
            for p in 0..ch.positions() {
                for s in 0..self.n_slices {
                    out.push((c, s, p));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry() {
        let cfg = ModelConfig::default();
        let positions: Vec<usize> = cfg.channels().iter().map(Channel::positions).collect();
        assert_eq!(positions, [116, 113, 111, 110, 108, 102]);
        assert_eq!(cfg.total_capsules(), 6600);
    }

    #[test]
    fn per_slice_groups() {
        let cfg = ModelConfig {
            weight_sharing: WeightSharing::PerSlice,
            ..ModelConfig::tiny()
        };
        let g = cfg.transform_groups();
        assert_eq!(g.len(), 30);
        assert_eq!(cfg.transform_group_count(), 4);
        assert_eq!(&g[..4], &[0, 1, 0, 1]);
        assert_eq!(g[16], 2);
    }

    #[test]
    fn square_geometry() {
        let cfg = ModelConfig {
            n_rois: 16,
            kernel_type: KernelType::Square,
            kernel_widths: vec![15],
            ..ModelConfig::tiny()
        };
        assert_eq!(cfg.channels()[0].positions(), 4);
    }

    #[test]
    fn rejects_bad_configs() {
        let wide = ModelConfig {
            kernel_widths: vec![9],
            ..ModelConfig::tiny()
        };
        assert!(wide.validate().is_err());
        let rate = ModelConfig {
            dropout_rate: 1.0,
            ..ModelConfig::tiny()
        };
        assert!(rate.validate().is_err());
        assert!("bogus".parse::<DropoutStrategy>().is_err());
        assert_eq!(
            "per-slice".parse::<WeightSharing>().unwrap(),
            WeightSharing::PerSlice
        );
    }
}
