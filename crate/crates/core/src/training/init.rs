use crate::capsnet::{ModelConfig, ModelParams};
use crate::error::Result;
use crate::numerics::RandomStream;

/// Stream id reserved for parameter initialization.
pub const INIT_STREAM: u64 = 0;

/// `(fan_in, fan_out)` of a weight tensor by layout.
fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        // conv [F, kh, kw], single input plane
        [f, kh, kw] => (kh * kw, f * kh * kw),
        // projection [in, out]
        [i, o] => (*i, *o),
        // class transforms [G, J, Lo, Li]
        [_, _, lo, li] => (*li, *lo),
        _ => (1, 1),
    }
}

/// Glorot-uniform weights in `±√(6/(fan_in+fan_out))`, zero biases.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut params = ModelParams::zeros(config);
    let mut rng = RandomStream::new(seed, INIT_STREAM);
    for (name, t) in params.tensors_mut().iter_mut() {
        if name.ends_with(".bias") {
            continue;
        }
        let (fan_in, fan_out) = fans(t.shape());
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in t.data_mut() {
            *v = rng.uniform_range(-limit, limit);
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_with_zero_biases() {
        let cfg = ModelConfig::tiny();
        let a = init_params(&cfg, 9).unwrap();
        assert_eq!(a, init_params(&cfg, 9).unwrap());
        assert_ne!(a, init_params(&cfg, 10).unwrap());
        for (name, t) in a.tensors().iter() {
            if name.ends_with(".bias") {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn uniform_moments() {
        let cfg = ModelConfig {
            n_rois: 40,
            kernel_widths: vec![1],
            capsule_len: 8,
            n_slices: 4,
            ..ModelConfig::tiny()
        };
        let params = init_params(&cfg, 1).unwrap();
        let w = params.get("class.weight").unwrap();
        assert!(w.len() > 10_000);
        let limit = (6.0f64 / 16.0).sqrt();
        let mean = w.sum() / w.len() as f64;
        let var = w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
        let expected = (2.0 * limit).powi(2) / 12.0;
        assert!(
            (var / expected - 1.0).abs() < 0.2,
            "var {var} vs {expected}"
        );
        assert!(w.max_abs() <= limit);
    }
}
