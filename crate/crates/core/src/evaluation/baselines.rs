use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::connectivity::{Dataset, Label};
use crate::error::{Error, Result};

use super::crossval::{run_folds, CvReport, FoldOutput};

/// Default number of connectivity features kept by the t-test filter.
pub const DEFAULT_TOP_FEATURES: usize = 100;
pub const DEFAULT_KNN_K: usize = 5;

/// Welch two-sample t statistic of `a` against `b`.
///
/// Returns 0 when both groups have zero variance.
pub fn welch_t(a: &[f64], b: &[f64]) -> f64 {
    let moments = |x: &[f64]| {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = if x.len() > 1 {
            x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        (mean, var / n)
    };
    let (ma, sa) = moments(a);
    let (mb, sb) = moments(b);
    let se = (sa + sb).sqrt();
    if se == 0.0 {
        0.0
    } else {
        (ma - mb) / se
    }
}

/// Indices of the `n_keep` features with the largest `|t|`, ties to the
/// lower index. `features[s]` is the feature vector of sample `s`.
pub fn ttest_select(features: &[Vec<f64>], labels: &[Label], n_keep: usize) -> Result<Vec<usize>> {
    let dim = features.first().map_or(0, Vec::len);
    if n_keep > dim {
        return Err(Error::Config(format!(
            "cannot keep {n_keep} of {dim} features"
        )));
    }
    if features.len() != labels.len() {
        return Err(Error::dim(
            "feature selection",
            format!("{} rows, {} labels", features.len(), labels.len()),
        ));
    }
    let sz: Vec<&Vec<f64>> = features
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == Label::Sz)
        .map(|(f, _)| f)
        .collect();
    let hc: Vec<&Vec<f64>> = features
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == Label::Hc)
        .map(|(f, _)| f)
        .collect();
    if sz.is_empty() || hc.is_empty() {
        return Err(Error::Dataset(
            "feature selection needs both classes".into(),
        ));
    }
    let mut scored: Vec<(f64, usize)> = (0..dim)
        .map(|j| {
            let a: Vec<f64> = sz.iter().map(|f| f[j]).collect();
            let b: Vec<f64> = hc.iter().map(|f| f[j]).collect();
            (welch_t(&a, &b).abs(), j)
        })
        .collect();
    scored.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    Ok(scored.into_iter().take(n_keep).map(|(_, j)| j).collect())
}

fn class_sizes(labels: &[Label]) -> Result<(usize, usize)> {
    let sz = labels.iter().filter(|&&l| l == Label::Sz).count();
    let hc = labels.len() - sz;
    if sz == 0 || hc == 0 {
        return Err(Error::Dataset(format!(
            "training set lacks a class (SZ {sz}, HC {hc})"
        )));
    }
    Ok((sz, hc))
}

/// Euclidean k-nearest-neighbour vote. Distance ties go to the lower train
/// index; vote ties go to SZ.
pub fn knn_predict(
    train: &[Vec<f64>],
    labels: &[Label],
    test: &[Vec<f64>],
    k: usize,
) -> Result<Vec<Label>> {
    class_sizes(labels)?;
    if k == 0 || k > train.len() {
        return Err(Error::Config(format!(
            "k = {k} outside 1..={}",
            train.len()
        )));
    }
    Ok(test
        .iter()
        .map(|x| {
            let mut d: Vec<(f64, usize)> = train
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    (
                        t.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>(),
                        i,
                    )
                })
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let sz = d[..k]
                .iter()
                .filter(|(_, i)| labels[*i] == Label::Sz)
                .count();
            if 2 * sz >= k {
                Label::Sz
            } else {
                Label::Hc
            }
        })
        .collect())
}

/// Two-class linear discriminant.
#[derive(Clone, Debug)]
pub struct Lda {
    /// `Σ⁻¹(μ_sz − μ_hc)`.
    pub weights: Vec<f64>,
    /// Decision is SZ when `w·x + bias ≥ 0`.
    pub bias: f64,
}

impl Lda {
    /// Fits class means, the pooled covariance plus a ridge of
    /// `1e-6·trace/dim`, and empirical priors.
    pub fn fit(train: &[Vec<f64>], labels: &[Label]) -> Result<Self> {
        let (n_sz, n_hc) = class_sizes(labels)?;
        let dim = train.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::Dataset("no features".into()));
        }
        let mut mu = [DVector::<f64>::zeros(dim), DVector::<f64>::zeros(dim)];
        for (x, l) in train.iter().zip(labels) {
            mu[l.index()] += DVector::from_column_slice(x);
        }
        mu[0] /= n_sz as f64;
        mu[1] /= n_hc as f64;
        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        for (x, l) in train.iter().zip(labels) {
            let d = DVector::from_column_slice(x) - &mu[l.index()];
            cov.ger(1.0, &d, &d, 1.0);
        }
        let n = train.len();
        let dof = if n > 2 { n - 2 } else { n };
        cov /= dof as f64;
        let ridge = 1e-6 * cov.trace() / dim as f64;
        for i in 0..dim {
            cov[(i, i)] += ridge;
        }
        let chol = cov.cholesky().ok_or_else(|| {
            Error::Degenerate("pooled covariance is singular after regularization".into())
        })?;
        let diff = &mu[0] - &mu[1];
        let w = chol.solve(&diff);
        let mid = (&mu[0] + &mu[1]) * 0.5;
        let prior = (n_sz as f64 / n_hc as f64).ln();
        Ok(Lda {
            bias: -w.dot(&mid) + prior,
            weights: w.iter().copied().collect(),
        })
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn predict(&self, x: &[f64]) -> Label {
        if self.score(x) >= 0.0 {
            Label::Sz
        } else {
            Label::Hc
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineMethod {
    Knn,
    Lda,
}

impl fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineMethod::Knn => "knn",
            BaselineMethod::Lda => "lda",
        })
    }
}

impl FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "knn" => Ok(BaselineMethod::Knn),
            "lda" => Ok(BaselineMethod::Lda),
            other => Err(Error::Config(format!(
                "unknown baseline method {other:?}; expected knn or lda"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineOptions {
    pub top_features: usize,
    pub k_neighbors: usize,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        Self {
            top_features: DEFAULT_TOP_FEATURES,
            k_neighbors: DEFAULT_KNN_K,
        }
    }
}

fn project(features: &[Vec<f64>], keep: &[usize]) -> Vec<Vec<f64>> {
    features
        .iter()
        .map(|f| keep.iter().map(|&j| f[j]).collect())
        .collect()
}

/// Selects features on `train` by t-test, then classifies `test`.
pub fn baseline_classify(
    method: BaselineMethod,
    train: &Dataset,
    test: &Dataset,
    opts: &BaselineOptions,
) -> Result<Vec<Label>> {
    let train_x: Vec<Vec<f64>> = train
        .samples
        .iter()
        .map(|s| s.matrix.upper_triangle())
        .collect();
    let test_x: Vec<Vec<f64>> = test
        .samples
        .iter()
        .map(|s| s.matrix.upper_triangle())
        .collect();
    let labels = train.labels();
    let dim = train_x.first().map_or(0, Vec::len);
    let keep = ttest_select(&train_x, &labels, opts.top_features.min(dim))?;
    let (tr, te) = (project(&train_x, &keep), project(&test_x, &keep));
    match method {
        BaselineMethod::Knn => knn_predict(&tr, &labels, &te, opts.k_neighbors),
        BaselineMethod::Lda => {
            let lda = Lda::fit(&tr, &labels)?;
            Ok(te.iter().map(|x| lda.predict(x)).collect())
        }
    }
}

/// Stratified cross-validation of a baseline; selection is refit per fold.
pub fn baseline_crossval(
    data: &Dataset,
    method: BaselineMethod,
    opts: &BaselineOptions,
    k: usize,
    seed: u64,
) -> Result<CvReport> {
    run_folds(data, k, seed, 1, |_, train, test, _| {
        Ok(FoldOutput {
            predictions: baseline_classify(method, train, test, opts)?,
            ..Default::default()
        })
    })
}
