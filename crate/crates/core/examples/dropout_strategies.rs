//! Scalar, vector and capsule dropout on the same set of primary capsules.
//!
//! cargo run --example dropout_strategies

use mkcapsnet::capsnet::{apply_dropout, DropoutStrategy, PrimaryCapsules};
use mkcapsnet::numerics::{RandomStream, Tensor};

fn main() -> mkcapsnet::Result<()> {
    let sizes = [12, 9, 7];
    let u = PrimaryCapsules {
        channels: sizes.iter().map(|&n| Tensor::full(&[n, 4], 1.0)).collect(),
    };
    let mut rng = RandomStream::new(0, 2);
    for strategy in [
        DropoutStrategy::Scalar,
        DropoutStrategy::Vector,
        DropoutStrategy::Capsule,
    ] {
        println!("{strategy}:");
        for trial in 0..3 {
            let d = apply_dropout(&u, strategy, 0.5, &mut rng)?;
            let zeros: usize = d
                .channels
                .iter()
                .map(|c| c.data().iter().filter(|&&x| x == 0.0).count())
                .sum();
            println!(
                "  trial {trial}: dropped capsules per channel {:?}, zero elements {zeros}",
                d.zero_counts()
            );
        }
    }
    Ok(())
}
