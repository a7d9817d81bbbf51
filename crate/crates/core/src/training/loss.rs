use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{NodeId, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossNorm {
    /// Unsquared hinges.
    L1,
    /// Squared hinges.
    L2,
}

impl fmt::Display for LossNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossNorm::L1 => "L1",
            LossNorm::L2 => "L2",
        })
    }
}

impl FromStr for LossNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "L1" => Ok(LossNorm::L1),
            "L2" => Ok(LossNorm::L2),
            other => Err(Error::Config(format!(
                "unknown loss norm {other:?}; expected L1 or L2"
            ))),
        }
    }
}

/// Margin-loss constants.
#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub m_plus: f64,
    pub m_minus: f64,
    pub lambda: f64,
    pub norm: LossNorm,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            m_plus: 0.9,
            m_minus: 0.1,
            lambda: 0.5,
            norm: LossNorm::L2,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.m_minus && self.m_minus < self.m_plus && self.m_plus < 1.0) {
            return Err(Error::Config(format!(
                "margins must satisfy 0 < m_minus < m_plus < 1, got m_minus={} m_plus={}",
                self.m_minus, self.m_plus
            )));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

fn check_lengths(lengths: &[f64], target: usize) -> Result<()> {
    if target >= lengths.len() {
        return Err(Error::Contract(format!(
            "target class {target} out of range for {} capsules",
            lengths.len()
        )));
    }
    if let Some((j, l)) = lengths
        .iter()
        .enumerate()
        .find(|(_, l)| !(**l >= 0.0 && **l < 1.0))
    {
        return Err(Error::Contract(format!(
            "capsule {j} has length {l}; squashed lengths must lie in [0, 1)"
        )));
    }
    Ok(())
}

/// `Σ_j T_j·h(m⁺ − ‖v_j‖) + λ(1 − T_j)·h(‖v_j‖ − m⁻)` with
/// `h(x) = max(0, x)` (L1) or `max(0, x)²` (L2).
pub fn margin_loss(lengths: &[f64], target: usize, cfg: &LossConfig) -> Result<f64> {
    check_lengths(lengths, target)?;
    let hinge = |x: f64| {
        let h = x.max(0.0);
        match cfg.norm {
            LossNorm::L1 => h,
            LossNorm::L2 => h * h,
        }
    };
    Ok(lengths
        .iter()
        .enumerate()
        .map(|(j, &len)| {
            if j == target {
                hinge(cfg.m_plus - len)
            } else {
                cfg.lambda * hinge(len - cfg.m_minus)
            }
        })
        .sum())
}

/// Records the margin loss of a `[n_classes]` length node.
pub fn margin_loss_on_tape(
    tape: &mut Tape,
    lengths: NodeId,
    target: usize,
    cfg: &LossConfig,
) -> Result<NodeId> {
    check_lengths(tape.value(lengths).data(), target)?;
    let n = tape.value(lengths).len();
    let mut present = vec![0.0; n];
    present[target] = 1.0;
    let absent: Vec<f64> = present.iter().map(|t| cfg.lambda * (1.0 - t)).collect();

    let mut short = tape.affine(lengths, -1.0, cfg.m_plus)?;
    short = tape.relu(short)?;
    let mut long = tape.affine(lengths, 1.0, -cfg.m_minus)?;
    long = tape.relu(long)?;
    if cfg.norm == LossNorm::L2 {
        short = tape.mul(short, short)?;
        long = tape.mul(long, long)?;
    }
    let a = tape.dot_const(short, Tensor::from_vec(present))?;
    let b = tape.dot_const(long, Tensor::from_vec(absent))?;
    tape.add(a, b)
}
