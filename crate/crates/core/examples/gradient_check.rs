//! Compares tape gradients of the full model loss against central differences.
//!
//! cargo run --release --example gradient_check

use mkcapsnet::capsnet::{forward_on_tape, Mode, ModelConfig, ModelParams};
use mkcapsnet::connectivity::{generate_synthetic, SynthSpec};
use mkcapsnet::numerics::{grad_check, RandomStream};
use mkcapsnet::training::{init_params, margin_loss_on_tape, LossConfig};

fn main() -> mkcapsnet::Result<()> {
    let cfg = ModelConfig::tiny();
    let mut spec = SynthSpec {
        n_rois: cfg.n_rois,
        n_per_class: 2,
        ..SynthSpec::default()
    };
    spec.blocks[0].end = 2;
    let sample = generate_synthetic(&spec)?.samples.remove(0);
    let loss = LossConfig::default();

    for seed in 0..3 {
        let mut params = init_params(&cfg, seed)?;
        // nonzero biases keep every primary capsule off the origin
        let mut rng = RandomStream::new(seed, 5);
        for (name, t) in params.tensors_mut().iter_mut() {
            if name.ends_with(".bias") {
                t.data_mut()
                    .iter_mut()
                    .for_each(|v| *v = rng.uniform_range(-0.5, 0.5));
            }
        }
        for mode in [Mode::Infer, Mode::Train] {
            let report = grad_check(params.tensors(), 1e-5, |tape, p| {
                let mp = ModelParams::from_tensors(&cfg, p.clone())?;
                let mut drop = RandomStream::new(seed, 7);
                let nodes = forward_on_tape(tape, &mp, &cfg, &sample.matrix, mode, &mut drop)?;
                margin_loss_on_tape(tape, nodes.lengths, sample.label.index(), &loss)
            })?;
            println!(
                "seed {seed} {mode:?}: {} elements, max relative error {:.2e} at {:?}",
                report.checked, report.max_relative_error, report.worst
            );
        }
    }
    Ok(())
}
