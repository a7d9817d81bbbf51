#![allow(dead_code)]

use mkcapsnet::capsnet::{ModelConfig, ModelParams};
use mkcapsnet::connectivity::{ConnectivityMatrix, SynthSpec};
use mkcapsnet::numerics::{RandomStream, Tensor};
use mkcapsnet::training::init_params;

/// Symmetric matrix with zero diagonal and N(0, scale²) off-diagonal entries.
pub fn random_matrix(n: usize, scale: f64, rng: &mut RandomStream) -> ConnectivityMatrix {
    let mut t = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i + 1..n {
            let v = scale * rng.normal();
            t.data_mut()[i * n + j] = v;
            t.data_mut()[j * n + i] = v;
        }
    }
    ConnectivityMatrix::new(t, None).unwrap()
}

/// Glorot-uniform weights with biases drawn uniformly in ±0.5, so no
/// primary capsule sits exactly at the origin.
pub fn random_params(cfg: &ModelConfig, seed: u64) -> ModelParams {
    let mut params = init_params(cfg, seed).unwrap();
    let mut rng = RandomStream::new(seed, 5);
    for (name, t) in params.tensors_mut().iter_mut() {
        if name.ends_with(".bias") {
            for v in t.data_mut() {
                *v = rng.uniform_range(-0.5, 0.5);
            }
        }
    }
    params
}

/// 100 samples per class, 16 ROIs, ROIs 0-3 coupled at 0.8 in SZ only.
pub fn separable_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        seed,
        ..SynthSpec::default()
    }
}

/// Same cohort shape with no class signal.
pub fn control_spec(seed: u64) -> SynthSpec {
    let mut spec = separable_spec(seed);
    spec.blocks[0].coupling_sz = 0.0;
    spec
}

/// Six column widths on 16 ROIs with few filters and short capsules.
pub fn scaled_config() -> ModelConfig {
    ModelConfig {
        n_rois: 16,
        n_filters: 8,
        n_slices: 2,
        capsule_len: 4,
        ..ModelConfig::default()
    }
}
