//! t-test feature selection followed by k-NN or LDA.
//!
//! cargo run --example baselines

use mkcapsnet::connectivity::{generate_synthetic, SynthSpec};
use mkcapsnet::evaluation::{baseline_crossval, ttest_select, BaselineMethod, BaselineOptions};

fn main() -> mkcapsnet::Result<()> {
    let data = generate_synthetic(&SynthSpec {
        seed: 7,
        ..SynthSpec::default()
    })?;
    let features: Vec<Vec<f64>> = data
        .samples
        .iter()
        .map(|s| s.matrix.upper_triangle())
        .collect();
    let top = ttest_select(&features, &data.labels(), 6)?;
    println!("top edges by |t| over the whole cohort: {top:?}");

    for top_features in [100, 20, 5] {
        let opts = BaselineOptions {
            top_features,
            ..BaselineOptions::default()
        };
        for method in [BaselineMethod::Knn, BaselineMethod::Lda] {
            let r = baseline_crossval(&data, method, &opts, 10, 3)?;
            println!("{method:>4} top {top_features:3}: {}", r.pooled_metrics);
        }
    }
    Ok(())
}
