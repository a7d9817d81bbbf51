//! Stratified k-fold cross-validation of the network, signal versus no signal.
//!
//! cargo run --release --example cross_validation

use mkcapsnet::capsnet::ModelConfig;
use mkcapsnet::connectivity::{generate_synthetic, SynthSpec};
use mkcapsnet::evaluation::{cross_validate, stratified_kfold};
use mkcapsnet::training::{LossConfig, TrainConfig};

fn main() -> mkcapsnet::Result<()> {
    let signal = SynthSpec {
        n_per_class: 50,
        seed: 4,
        ..SynthSpec::default()
    };
    let mut control = signal.clone();
    control.blocks[0].coupling_sz = 0.0;

    let cfg = ModelConfig {
        n_rois: 16,
        n_filters: 8,
        n_slices: 2,
        capsule_len: 4,
        ..ModelConfig::default()
    };
    let tc = TrainConfig {
        epochs: 40,
        ..TrainConfig::default()
    };
    let jobs = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(5);

    for (name, spec) in [("signal", signal), ("control", control)] {
        let data = generate_synthetic(&spec)?;
        let plan = stratified_kfold(&data.labels(), 5, 1)?;
        println!("{name}: fold (SZ, HC) counts {:?}", plan.class_counts);
        let report = cross_validate(&data, &cfg, &tc, &LossConfig::default(), 5, 1, jobs)?;
        for f in &report.folds {
            println!("  fold {}: {}", f.fold, f.metrics);
        }
        println!("  pooled {}", report.pooled_metrics);
        println!("  mean   {}", report.mean_metrics);
    }
    Ok(())
}
