//! Routing-by-agreement between primary capsules and class capsules.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numerics::{NodeId, Tape, Tensor};

/// Logits, coupling coefficients and outputs of one routing run.
#[derive(Clone, Debug)]
pub struct RoutingState {
    /// Final logits `b`, `[lower, classes]`.
    pub logits: Tensor,
    /// Final coupling coefficients `c`, `[lower, classes]`.
    pub coupling: Tensor,
    /// `c` at every iteration, in order.
    pub snapshots: Vec<Tensor>,
    /// Pre-squash class inputs `s`, `[classes, len]`.
    pub pre_squash: Tensor,
    /// Class capsules `v`, `[classes, len]`.
    pub outputs: Tensor,
}

/// `û[i, j] = W[group(i), j] · u[i]` for lower capsules `u: [N, Li]` and
/// transforms `W: [G, J, Lo, Li]`.
pub fn transform_capsules(weights: &Tensor, u: &Tensor, groups: &[usize]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let w = tape.constant(weights.clone());
    let u = tape.constant(u.clone());
    let out = tape.capsule_transform(w, u, Rc::from(groups))?;
    Ok(tape.value(out).clone())
}

/// Records the unrolled routing loop on `tape`. `predictions` is
/// `[lower, classes, len]`; returns the class-capsule node.
pub fn route(
    tape: &mut Tape,
    predictions: NodeId,
    iterations: usize,
) -> Result<(NodeId, RoutingState)> {
    if iterations == 0 {
        return Err(Error::Contract(
            "routing needs at least one iteration".into(),
        ));
    }
    let shape = tape.shape(predictions).to_vec();
    if shape.len() != 3 {
        return Err(Error::dim(
            "routing",
            format!("predictions shape {shape:?}"),
        ));
    }
    let (n, j) = (shape[0], shape[1]);
    let mut logits = tape.constant(Tensor::zeros(&[n, j]));
    let mut snapshots = Vec::with_capacity(iterations);
    let mut result = None;
    for it in 0..iterations {
        let coupling = tape.softmax_rows(logits)?;
        snapshots.push(tape.value(coupling).clone());
        let s = tape.weighted_sum(coupling, predictions)?;
        let v = tape.squash_rows(s)?;
        if it + 1 < iterations {
            let agreement = tape.agreement(predictions, v)?;
            logits = tape.add(logits, agreement)?;
        } else {
            result = Some((coupling, s, v));
        }
    }
    let (coupling, s, v) = result.expect("iterations >= 1");
    let state = RoutingState {
        logits: tape.value(logits).clone(),
        coupling: tape.value(coupling).clone(),
        snapshots,
        pre_squash: tape.value(s).clone(),
        outputs: tape.value(v).clone(),
    };
    Ok((v, state))
}

/// Routing on plain values (no gradient).
pub fn dynamic_routing(predictions: &Tensor, iterations: usize) -> Result<(Tensor, RoutingState)> {
    if !predictions.is_finite() {
        return Err(Error::NonFinite("routing predictions".into()));
    }
    let mut tape = Tape::new();
    let p = tape.constant(predictions.clone());
    let (v, state) = route(&mut tape, p, iterations)?;
    Ok((tape.value(v).clone(), state))
}
