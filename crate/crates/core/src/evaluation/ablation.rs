use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::capsnet::{DropoutStrategy, KernelType, ModelConfig};
use crate::connectivity::{write_atomic, Dataset};
use crate::error::{Error, Result};
use crate::training::{LossConfig, LossNorm, TrainConfig};

use super::crossval::cross_validate;
use super::metrics::{format_metric, Metrics};

pub const ABLATION_HEADER: &str =
    "dropout,kernel,multislice,loss_norm,accuracy,sensitivity,specificity";

/// Layer-1 kernel arrangement of an ablation cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelChoice {
    /// One full-height column kernel of the given width.
    Column(usize),
    /// One square kernel, valid stride-1 convolution.
    Square(usize),
    /// The base configuration's full set of column widths.
    Multi,
}

impl fmt::Display for KernelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelChoice::Column(w) => write!(f, "column({w})"),
            KernelChoice::Square(w) => write!(f, "square({w})"),
            KernelChoice::Multi => f.write_str("multi"),
        }
    }
}

impl FromStr for KernelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "multi" || s == "multiple" {
            return Ok(KernelChoice::Multi);
        }
        let bad = || {
            Error::Config(format!(
                "kernel {s:?}: expected column(W), square(W) or multi"
            ))
        };
        let (kind, rest) = s.split_once('(').ok_or_else(bad)?;
        let w: usize = rest
            .strip_suffix(')')
            .ok_or_else(bad)?
            .trim()
            .parse()
            .map_err(|_| bad())?;
        match kind.trim() {
            "column" => Ok(KernelChoice::Column(w)),
            "square" => Ok(KernelChoice::Square(w)),
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AblationCell {
    pub dropout: DropoutStrategy,
    pub kernel: KernelChoice,
    pub multislice: bool,
    pub loss_norm: LossNorm,
}

impl AblationCell {
    /// Model and loss settings for this cell, derived from the base ones.
    /// Turning multi-slice off leaves one slice per channel.
    pub fn apply(
        &self,
        base: &ModelConfig,
        loss: &LossConfig,
    ) -> Result<(ModelConfig, LossConfig)> {
        let mut m = base.clone();
        m.dropout_strategy = self.dropout;
        match self.kernel {
            KernelChoice::Column(w) => {
                m.kernel_type = KernelType::Column;
                m.kernel_widths = vec![w];
            }
            KernelChoice::Square(w) => {
                m.kernel_type = KernelType::Square;
                m.kernel_widths = vec![w];
            }
            KernelChoice::Multi => m.kernel_type = KernelType::Column,
        }
        if !self.multislice {
            m.n_slices = 1;
        }
        m.validate()?;
        let l = LossConfig {
            norm: self.loss_norm,
            ..loss.clone()
        };
        Ok((m, l))
    }

    fn csv_prefix(&self) -> String {
        format!(
            "{},{},{},{}",
            self.dropout,
            self.kernel,
            if self.multislice { "yes" } else { "no" },
            self.loss_norm
        )
    }
}

/// A list of ablation cells.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AblationSpec {
    pub cells: Vec<AblationCell>,
}

impl AblationSpec {
    /// The eight-row comparison: three dropout strategies on width-1
    /// columns, a width-`w` column, a `w`×`w` square, multi-kernel single
    /// slice, then multi-kernel multi-slice under L1 and L2. `w` is the
    /// largest base width.
    pub fn standard(base: &ModelConfig) -> Self {
        use DropoutStrategy::*;
        let w = base.kernel_widths.iter().copied().max().unwrap_or(1);
        let cell = |dropout, kernel, multislice, loss_norm| AblationCell {
            dropout,
            kernel,
            multislice,
            loss_norm,
        };
        Self {
            cells: vec![
                cell(Scalar, KernelChoice::Column(1), false, LossNorm::L2),
                cell(Vector, KernelChoice::Column(1), false, LossNorm::L2),
                cell(Capsule, KernelChoice::Column(1), false, LossNorm::L2),
                cell(Capsule, KernelChoice::Column(w), false, LossNorm::L2),
                cell(Capsule, KernelChoice::Square(w), false, LossNorm::L2),
                cell(Capsule, KernelChoice::Multi, false, LossNorm::L2),
                cell(Capsule, KernelChoice::Multi, true, LossNorm::L1),
                cell(Capsule, KernelChoice::Multi, true, LossNorm::L2),
            ],
        }
    }

    /// Parses CSV rows `dropout,kernel,multislice,loss_norm` (header
    /// optional, `#` comments allowed). A file containing just `standard`
    /// selects [`AblationSpec::standard`].
    pub fn parse(text: &str, base: &ModelConfig) -> Result<Self> {
        let mut cells = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() || line.starts_with("dropout,") {
                continue;
            }
            if line == "standard" {
                cells.extend(Self::standard(base).cells);
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let ctx = |m: String| Error::Config(format!("grid line {}: {m}", i + 1));
            if fields.len() != 4 {
                return Err(ctx(format!("expected 4 fields, got {}", fields.len())));
            }
            let multislice = match fields[2].to_ascii_lowercase().as_str() {
                "yes" | "true" | "on" => true,
                "no" | "false" | "off" => false,
                other => return Err(ctx(format!("multislice {other:?}: expected yes or no"))),
            };
            cells.push(AblationCell {
                dropout: fields[0].parse().map_err(|e: Error| ctx(e.to_string()))?,
                kernel: fields[1].parse().map_err(|e: Error| ctx(e.to_string()))?,
                multislice,
                loss_norm: fields[3].parse().map_err(|e: Error| ctx(e.to_string()))?,
            });
        }
        if cells.is_empty() {
            return Err(Error::Config("ablation grid has no cells".into()));
        }
        Ok(Self { cells })
    }

    /// Checks every cell maps to a valid configuration.
    pub fn validate(&self, base: &ModelConfig, loss: &LossConfig) -> Result<()> {
        for c in &self.cells {
            c.apply(base, loss)
                .map_err(|e| Error::Config(format!("cell {}: {e}", c.csv_prefix())))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub cell: AblationCell,
    /// Pooled metrics, or the error message of a failed cell.
    pub outcome: std::result::Result<Metrics, String>,
}

#[derive(Clone, Debug)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(ABLATION_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.cell.csv_prefix());
            match &r.outcome {
                Ok(m) => {
                    for v in [m.accuracy, m.sensitivity, m.specificity] {
                        s.push(',');
                        s.push_str(&format_metric(v));
                    }
                }
                Err(_) => s.push_str(",error,error,error"),
            }
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Cross-validates every cell with the same folds and seed. A failing
/// cell is recorded and the remaining cells still run.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    data: &Dataset,
    spec: &AblationSpec,
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    k: usize,
    seed: u64,
    jobs: usize,
) -> Result<AblationTable> {
    spec.validate(base, loss_cfg)?;
    let mut rows = Vec::with_capacity(spec.cells.len());
    for &cell in &spec.cells {
        let (m, l) = cell.apply(base, loss_cfg)?;
        let outcome = cross_validate(data, &m, train_cfg, &l, k, seed, jobs)
            .map(|r| r.pooled_metrics)
            .map_err(|e| e.to_string());
        rows.push(AblationRow { cell, outcome });
    }
    Ok(AblationTable { rows })
}
