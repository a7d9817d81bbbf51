//! Stratified cross-validation, confusion metrics, classical baselines,
//! the structural ablation grid, and routing-trace export.

mod ablation;
mod baselines;
mod crossval;
mod folds;
mod metrics;
mod trace;

pub use ablation::{
    run_ablation, AblationCell, AblationRow, AblationSpec, AblationTable, KernelChoice,
    ABLATION_HEADER,
};
pub use baselines::{
    baseline_classify, baseline_crossval, knn_predict, ttest_select, welch_t, BaselineMethod,
    BaselineOptions, Lda, DEFAULT_KNN_K, DEFAULT_TOP_FEATURES,
};
pub use crossval::{cross_validate, fold_seed, run_folds, CvReport, FoldOutput, FoldResult};
pub use folds::{stratified_kfold, FoldPlan, FOLD_STREAM};
pub use metrics::{compute_metrics, format_metric, mean_metrics, ConfusionCounts, Metrics};
pub use trace::{export_routing_trace, RoutingTrace, TraceRow};
