//! ROI time series to Fisher-z connectivity matrices, dataset files, and
//! synthetic cohorts.

mod io;
mod synth;

use std::fmt;
use std::str::FromStr;

pub(crate) use io::write_atomic;
pub use io::{
    load_dataset, matrix_to_string, read_manifest, read_matrix, write_dataset, write_manifest,
    write_matrix,
};
pub use synth::{generate_synthetic, CouplingBlock, SynthSpec};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Correlations are clamped to `±(1 − R_CLAMP)` before the z transform.
pub const R_CLAMP: f64 = 1e-7;

/// Diagnostic class. `Sz` is the positive class and model output 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Sz,
    Hc,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Sz, Label::Hc];

    pub fn index(self) -> usize {
        match self {
            Label::Sz => 0,
            Label::Hc => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn token(self) -> &'static str {
        match self {
            Label::Sz => "SZ",
            Label::Hc => "HC",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "SZ" => Ok(Label::Sz),
            "HC" => Ok(Label::Hc),
            other => Err(format!(
                "unknown label {other:?}; allowed tokens are {{SZ, HC}}"
            )),
        }
    }
}

/// Per-ROI signals, `n_rois × n_timepoints`.
#[derive(Clone, Debug)]
pub struct TimeSeries {
    values: Tensor,
}

impl TimeSeries {
    pub fn new(n_rois: usize, n_timepoints: usize, values: Vec<f64>) -> Result<Self> {
        if n_timepoints < 3 {
            return Err(Error::Degenerate(format!(
                "need at least 3 timepoints, got {n_timepoints}"
            )));
        }
        let values = Tensor::new(vec![n_rois, n_timepoints], values)?;
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let t = Tensor::from_rows(rows)?;
        Self::new(t.shape()[0], t.shape()[1], t.into_data())
    }

    pub fn n_rois(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn n_timepoints(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn roi(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }
}

/// Symmetric `n × n` Fisher-z matrix with zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct ConnectivityMatrix {
    values: Tensor,
    pub label: Option<Label>,
}

impl ConnectivityMatrix {
    /// Validates exact symmetry, zero diagonal, and finiteness.
    pub fn new(values: Tensor, label: Option<Label>) -> Result<Self> {
        if values.rank() != 2 || values.shape()[0] != values.shape()[1] {
            return Err(Error::dim(
                "connectivity matrix",
                format!("shape {:?} is not square", values.shape()),
            ));
        }
        let n = values.shape()[0];
        for i in 0..n {
            if values.at2(i, i) != 0.0 {
                return Err(Error::Domain(format!(
                    "diagonal entry {i} is {} (must be 0)",
                    values.at2(i, i)
                )));
            }
            for j in i + 1..n {
                let (a, b) = (values.at2(i, j), values.at2(j, i));
                if !a.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "connectivity value at ({i}, {j})"
                    )));
                }
                if a != b {
                    return Err(Error::Domain(format!(
                        "asymmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
            }
        }
        Ok(Self { values, label })
    }

    pub fn n(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.at2(i, j)
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    /// Strict upper triangle in row-major order, `n(n−1)/2` values.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                out.push(self.get(i, j));
            }
        }
        out
    }
}

/// A matrix with its manifest path and (required) label.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub matrix: ConnectivityMatrix,
    pub label: Label,
}

/// Labeled matrices ready for training or evaluation.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// `(SZ count, HC count)`.
    pub fn class_counts(&self) -> (usize, usize) {
        let sz = self.samples.iter().filter(|s| s.label == Label::Sz).count();
        (sz, self.samples.len() - sz)
    }

    pub fn n_rois(&self) -> Option<usize> {
        self.samples.first().map(|s| s.matrix.n())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// Errors unless both classes are present and all matrices share a size.
    pub fn ensure_trainable(&self) -> Result<()> {
        let (sz, hc) = self.class_counts();
        if sz == 0 || hc == 0 {
            return Err(Error::Dataset(format!(
                "both classes required, got SZ={sz} HC={hc}"
            )));
        }
        let n = self.n_rois().unwrap_or(0);
        if let Some(s) = self.samples.iter().find(|s| s.matrix.n() != n) {
            return Err(Error::Dataset(format!(
                "{} is {}x{}, expected {n}x{n}",
                s.id,
                s.matrix.n(),
                s.matrix.n()
            )));
        }
        Ok(())
    }
}

/// Manifest rows: matrix path (relative to the manifest) and label.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<(String, Label)>,
}

impl DatasetManifest {
    pub fn class_counts(&self) -> (usize, usize) {
        let sz = self.entries.iter().filter(|(_, l)| *l == Label::Sz).count();
        (sz, self.entries.len() - sz)
    }
}

/// Sample Pearson correlation, clamped to `[−1, 1]`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dim(
            "pearson",
            format!("series lengths {} and {}", x.len(), y.len()),
        ));
    }
    if x.len() < 3 {
        return Err(Error::Degenerate(format!(
            "series of length {} (need ≥ 3)",
            x.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("zero-variance series".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Fisher r-to-z transform with `|r|` clamped at `1 − 1e-7`.
pub fn fisher_z(r: f64) -> Result<f64> {
    if !(r.abs() <= 1.0) {
        return Err(Error::Domain(format!("correlation {r} outside [-1, 1]")));
    }
    // evaluated on |r| so the transform is exactly odd
    Ok(r.signum() * r.abs().min(1.0 - R_CLAMP).atanh())
}

/// Fisher-z of pairwise Pearson correlations with a zero diagonal.
pub fn connectivity_matrix(ts: &TimeSeries) -> Result<ConnectivityMatrix> {
    let n = ts.n_rois();
    for i in 0..n {
        let row = ts.roi(i);
        if row.iter().all(|&v| v == row[0]) {
            return Err(Error::Degenerate(format!("ROI {i} has zero variance")));
        }
    }
    let mut values = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i + 1..n {
            let z = fisher_z(pearson(ts.roi(i), ts.roi(j)).map_err(|e| match e {
                Error::Degenerate(d) => Error::Degenerate(format!("ROI pair ({i}, {j}): {d}")),
                other => other,
            })?)?;
            values.data_mut()[i * n + j] = z;
            values.data_mut()[j * n + i] = z;
        }
    }
    ConnectivityMatrix::new(values, None)
}
