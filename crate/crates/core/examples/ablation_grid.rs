//! Eight-cell ablation over dropout strategy, kernel layout, multi-slice
//! capsules and loss norm, written as CSV.
//!
//! cargo run --release --example ablation_grid -- [OUT_CSV]

use mkcapsnet::capsnet::ModelConfig;
use mkcapsnet::connectivity::{generate_synthetic, SynthSpec};
use mkcapsnet::evaluation::{run_ablation, AblationSpec};
use mkcapsnet::training::{LossConfig, TrainConfig};

fn main() -> mkcapsnet::Result<()> {
    let data = generate_synthetic(&SynthSpec {
        n_per_class: 50,
        seed: 11,
        ..SynthSpec::default()
    })?;
    let base = ModelConfig {
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

    let spec = AblationSpec::standard(&base);
    let table = run_ablation(
        &data,
        &spec,
        &base,
        &tc,
        &LossConfig::default(),
        5,
        11,
        jobs,
    )?;
    print!("{}", table.to_csv());
    if let Some(path) = std::env::args().nth(1) {
        table.write(path.as_ref())?;
    }
    Ok(())
}
