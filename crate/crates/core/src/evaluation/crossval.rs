use std::fmt::Write as _;

use rayon::prelude::*;

use crate::capsnet::{ModelConfig, ModelParams};
use crate::connectivity::{Dataset, Label};
use crate::error::{Error, Result};
use crate::numerics::RandomStream;
use crate::training::{fit, predict, LossConfig, TrainConfig, TrainHistory};

use super::folds::{stratified_kfold, FoldPlan};
use super::metrics::{compute_metrics, mean_metrics, ConfusionCounts, Metrics};

/// What one fold's classifier produced.
#[derive(Clone, Debug, Default)]
pub struct FoldOutput {
    pub predictions: Vec<Label>,
    pub history: Option<TrainHistory>,
    pub params: Option<ModelParams>,
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub fold: usize,
    /// Seed handed to the fold's classifier.
    pub seed: u64,
    pub test_indices: Vec<usize>,
    pub predictions: Vec<Label>,
    pub confusion: ConfusionCounts,
    pub metrics: Metrics,
    pub history: Option<TrainHistory>,
    pub params: Option<ModelParams>,
}

/// Per-fold, pooled, and per-fold-mean results of a cross-validation run.
#[derive(Clone, Debug)]
pub struct CvReport {
    pub plan: FoldPlan,
    pub folds: Vec<FoldResult>,
    pub pooled: ConfusionCounts,
    pub pooled_metrics: Metrics,
    pub mean_metrics: Metrics,
}

impl CvReport {
    /// Human-readable lines (4 decimals) followed by a `key=value` dump.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for f in &self.folds {
            let _ = writeln!(
                s,
                "fold {}: n={}  {}",
                f.fold,
                f.test_indices.len(),
                f.metrics
            );
        }
        let _ = writeln!(s, "pooled: {}", self.pooled_metrics);
        let _ = writeln!(s, "mean:   {}", self.mean_metrics);
        let _ = writeln!(s, "folds={}", self.plan.k);
        let _ = writeln!(s, "seed={}", self.plan.seed);
        let c = &self.pooled;
        let _ = writeln!(
            s,
            "pooled.tp={}\npooled.fn={}\npooled.tn={}\npooled.fp={}",
            c.tp, c.fn_, c.tn, c.fp
        );
        s.push_str(&self.pooled_metrics.key_values("pooled"));
        s.push_str(&self.mean_metrics.key_values("mean"));
        for f in &self.folds {
            s.push_str(&f.metrics.key_values(&format!("fold{}", f.fold)));
        }
        s
    }
}

/// Seed for fold `fold`, drawn from stream `(seed, fold)`.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    RandomStream::new(seed, fold as u64).next_u64()
}

/// Runs `classify(fold, train, test, fold_seed)` on every fold of a
/// stratified plan, `jobs` folds at a time. Results do not depend on `jobs`.
pub fn run_folds<F>(
    data: &Dataset,
    k: usize,
    seed: u64,
    jobs: usize,
    classify: F,
) -> Result<CvReport>
where
    F: Fn(usize, &Dataset, &Dataset, u64) -> Result<FoldOutput> + Sync,
{
    let plan = stratified_kfold(&data.labels(), k, seed)?;
    let run = |f: usize| -> Result<FoldResult> {
        let train = data.subset(&plan.train_indices(f));
        let test = data.subset(&plan.folds[f]);
        let s = fold_seed(seed, f);
        let out = classify(f, &train, &test, s).map_err(|e| Error::Fold {
            fold: f,
            source: Box::new(e),
        })?;
        if out.predictions.len() != test.len() {
            return Err(Error::Contract(format!(
                "fold {f}: {} predictions for {} samples",
                out.predictions.len(),
                test.len()
            )));
        }
        let confusion = ConfusionCounts::from_predictions(&test.labels(), &out.predictions);
        Ok(FoldResult {
            fold: f,
            seed: s,
            test_indices: plan.folds[f].clone(),
            predictions: out.predictions,
            confusion,
            metrics: compute_metrics(&confusion),
            history: out.history,
            params: out.params,
        })
    };
    let results: Vec<Result<FoldResult>> = if jobs <= 1 {
        (0..k).map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {jobs} worker threads: {e}")))?;
        pool.install(|| (0..k).into_par_iter().map(run).collect())
    };
    let folds = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut pooled = ConfusionCounts::default();
    for f in &folds {
        pooled.merge(&f.confusion);
    }
    let per_fold: Vec<Metrics> = folds.iter().map(|f| f.metrics).collect();
    Ok(CvReport {
        plan,
        pooled_metrics: compute_metrics(&pooled),
        mean_metrics: mean_metrics(&per_fold),
        pooled,
        folds,
    })
}

/// k-fold cross-validation of the capsule network. Each fold trains from
/// scratch with `train_cfg.seed` replaced by [`fold_seed`]`(seed, fold)`.
pub fn cross_validate(
    data: &Dataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    k: usize,
    seed: u64,
    jobs: usize,
) -> Result<CvReport> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    loss_cfg.validate()?;
    run_folds(data, k, seed, jobs, |_, train, test, s| {
        let tc = TrainConfig {
            seed: s,
            ..train_cfg.clone()
        };
        let (params, history) = fit(train, model_cfg, &tc, loss_cfg)?;
        let predictions = test
            .samples
            .iter()
            .map(|smp| predict(&params, model_cfg, &smp.matrix).map(|(_, label)| label))
            .collect::<Result<Vec<_>>>()?;
        Ok(FoldOutput {
            predictions,
            history: Some(history),
            params: Some(params),
        })
    })
}
