//! Trains a scaled-down network on synthetic data, checkpoints it and
//! evaluates the restored copy on a held-out cohort.
//!
//! cargo run --release --example train_classifier

use mkcapsnet::capsnet::ModelConfig;
use mkcapsnet::connectivity::{generate_synthetic, SynthSpec};
use mkcapsnet::evaluation::{compute_metrics, ConfusionCounts};
use mkcapsnet::training::{fit, predict, Checkpoint, LossConfig, TrainConfig};

fn main() -> mkcapsnet::Result<()> {
    let train = generate_synthetic(&SynthSpec {
        n_per_class: 40,
        seed: 1,
        ..SynthSpec::default()
    })?;
    let test = generate_synthetic(&SynthSpec {
        n_per_class: 40,
        seed: 2,
        ..SynthSpec::default()
    })?;
    let cfg = ModelConfig {
        n_rois: 16,
        n_filters: 8,
        n_slices: 2,
        capsule_len: 4,
        ..ModelConfig::default()
    };
    let tc = TrainConfig {
        epochs: 60,
        seed: 9,
        ..TrainConfig::default()
    };

    let (params, history) = fit(&train, &cfg, &tc, &LossConfig::default())?;
    for (e, l) in history.epoch_losses.iter().enumerate().step_by(10) {
        println!("epoch {e:3}  loss {l:.5}");
    }
    println!(
        "{} epochs, final loss {:.5}, stopped early: {}",
        history.epoch_losses.len(),
        history.epoch_losses.last().unwrap(),
        history.stopped_early
    );

    let path = std::env::temp_dir().join("mkcapsnet_example.ckpt");
    Checkpoint::new(cfg, params, history).save(&path)?;
    let ck = Checkpoint::load(&path)?;

    let mut counts = ConfusionCounts::default();
    for s in &test.samples {
        let (_, pred) = predict(&ck.params, &ck.config, &s.matrix)?;
        counts.record(s.label, pred);
    }
    println!("held-out: {}", compute_metrics(&counts));
    Ok(())
}
