//! Exports per-iteration coupling coefficients of a trained model as CSV.
//!
//! cargo run --release --example routing_trace -- [OUT_CSV]

use mkcapsnet::capsnet::ModelConfig;
use mkcapsnet::connectivity::{generate_synthetic, SynthSpec};
use mkcapsnet::evaluation::export_routing_trace;
use mkcapsnet::training::{fit, LossConfig, TrainConfig};

fn main() -> mkcapsnet::Result<()> {
    let data = generate_synthetic(&SynthSpec {
        n_per_class: 30,
        seed: 5,
        ..SynthSpec::default()
    })?;
    let cfg = ModelConfig {
        n_rois: 16,
        n_filters: 4,
        n_slices: 2,
        capsule_len: 4,
        kernel_widths: vec![1, 4],
        ..ModelConfig::default()
    };
    let tc = TrainConfig {
        epochs: 30,
        ..TrainConfig::default()
    };
    let (params, _) = fit(&data, &cfg, &tc, &LossConfig::default())?;

    let sample = &data.samples[0];
    let trace = export_routing_trace(&params, &cfg, &sample.matrix, &sample.id)?;
    let csv = trace.to_csv();
    for line in csv.lines().take(6) {
        println!("{line}");
    }
    println!(
        "... {} rows for sample {} ({})",
        trace.rows.len(),
        sample.id,
        sample.label
    );

    // capsules whose final coupling leans hardest toward the true class
    let last = trace.rows.iter().map(|r| r.iteration).max().unwrap_or(0);
    let mut finals: Vec<_> = trace.rows.iter().filter(|r| r.iteration == last).collect();
    let k = sample.label.index();
    finals.sort_by(|a, b| b.coupling[k].total_cmp(&a.coupling[k]));
    for r in finals.iter().take(3) {
        println!(
            "channel {} slice {} position {}: c = {:.4}",
            r.channel, r.slice, r.position, r.coupling[k]
        );
    }
    if let Some(path) = std::env::args().nth(1) {
        trace.write(path.as_ref())?;
    }
    Ok(())
}
