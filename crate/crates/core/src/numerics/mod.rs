//! Dense `f64` tensors, seeded random streams, and reverse-mode
//! differentiation for every operation the capsule network uses.

mod gradcheck;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use rng::RandomStream;
pub use tape::{NodeId, Tape, SQUASH_EPS, SQUASH_MAX_NORM};
pub use tensor::{NamedTensors, Tensor};

use crate::error::{Error, Result};

/// Full-height column convolution.
///
/// `input` is `H×W`; `kernel` is `H×k` (one filter) or `F×H×k`; `bias` holds
/// one value per filter. Returns `F×(W−k+1)`, one feature row per filter.
pub fn conv_columns(input: &Tensor, kernel: &Tensor, bias: &[f64]) -> Result<Tensor> {
    if input.rank() != 2 {
        return Err(Error::dim(
            "conv_columns",
            format!("input shape {:?}", input.shape()),
        ));
    }
    let kernel = match kernel.rank() {
        2 => kernel.clone().reshape([&[1], kernel.shape()].concat())?,
        3 => kernel.clone(),
        _ => {
            return Err(Error::dim(
                "conv_columns",
                format!("kernel shape {:?}", kernel.shape()),
            ))
        }
    };
    let (h, w) = (input.shape()[0], input.shape()[1]);
    let (f, kh, kw) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    if kh != h {
        return Err(Error::dim(
            "conv_columns",
            format!("kernel height {kh} must equal input height {h}"),
        ));
    }
    if kw > w {
        return Err(Error::dim(
            "conv_columns",
            format!("kernel width {kw} exceeds input width {w}"),
        ));
    }
    let pf = tape::conv2d_valid(input, &kernel, Some(bias))?;
    let p = pf.shape()[0];
    let mut out = vec![0.0; f * p];
    for (pos, row) in pf.data().chunks_exact(f).enumerate() {
        for (fi, v) in row.iter().enumerate() {
            out[fi * p + pos] = *v;
        }
    }
    Tensor::new(vec![f, p], out)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::dim("softmax", "empty logit vector"));
    }
    let mut out = vec![0.0; logits.len()];
    tape::softmax_into(logits, &mut out);
    Ok(out)
}

/// Squashing nonlinearity: `v = ‖s‖²/(1+‖s‖²) · s/‖s‖`, zero for `‖s‖ < 1e-12`.
pub fn squash(s: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; s.len()];
    tape::squash_into(s, &mut v);
    v
}
