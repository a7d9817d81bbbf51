//! Watches coupling coefficients and class capsule lengths across routing
//! iterations on a single forward pass.
//!
//! cargo run --example routing_dynamics

use mkcapsnet::capsnet::{dynamic_routing, forward, squash, Mode, ModelConfig};
use mkcapsnet::connectivity::{generate_synthetic, SynthSpec};
use mkcapsnet::numerics::{RandomStream, Tensor};
use mkcapsnet::training::init_params;

fn main() -> mkcapsnet::Result<()> {
    let v = squash(&[3.0, 4.0]);
    println!("squash(3, 4) = ({:.6}, {:.6})", v[0], v[1]);

    // three lower capsules voting for two classes, length-2 predictions
    let votes = Tensor::new(
        vec![3, 2, 2],
        vec![1.0, 0.0, -0.2, 0.1, 0.9, 0.1, 0.0, 0.3, 1.1, -0.1, 0.2, 0.0],
    )?;
    let (out, state) = dynamic_routing(&votes, 3)?;
    for (it, c) in state.snapshots.iter().enumerate() {
        println!("iteration {}: c = {:?}", it + 1, c.data());
    }
    println!("class capsules: {:?}", out.data());

    let cfg = ModelConfig {
        n_rois: 16,
        n_filters: 8,
        n_slices: 2,
        capsule_len: 4,
        ..ModelConfig::default()
    };
    let params = init_params(&cfg, 3)?;
    let sample = generate_synthetic(&SynthSpec {
        n_per_class: 1,
        ..SynthSpec::default()
    })?
    .samples
    .remove(0);
    let f = forward(
        &params,
        &cfg,
        &sample.matrix,
        Mode::Infer,
        &mut RandomStream::new(0, 0),
    )?;
    println!("{} primary capsules", f.primary.total());
    for (it, c) in f.routing.snapshots.iter().enumerate() {
        let n = c.shape()[0] as f64;
        let mean_sz = c.data().chunks_exact(2).map(|r| r[0]).sum::<f64>() / n;
        println!("iteration {}: mean c to SZ = {mean_sz:.8}", it + 1);
    }
    println!("lengths: SZ {:.4}, HC {:.4}", f.lengths[0], f.lengths[1]);
    Ok(())
}
