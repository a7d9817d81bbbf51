use crate::error::{Error, Result};

use super::tape::{NodeId, Tape};
use super::tensor::NamedTensors;

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients against central differences
/// `(f(θ+h) − f(θ−h)) / 2h` for every element of every parameter.
///
/// `build` records the scalar objective on a fresh tape; it must register
/// each tensor of the supplied parameter set via [`Tape::param`] and must
/// be deterministic.
pub fn grad_check<F>(params: &NamedTensors, h: f64, mut build: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &NamedTensors) -> Result<NodeId>,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut tape = Tape::new();
    let out = build(&mut tape, params)?;
    let base = tape.value(out).item();
    if !base.is_some_and(f64::is_finite) {
        return Err(Error::NonFinite(
            "objective at the unperturbed point".into(),
        ));
    }
    let grads = tape.backward(out, 1.0)?;

    let mut eval = |p: &NamedTensors| -> Result<f64> {
        let mut t = Tape::new();
        let o = build(&mut t, p)?;
        t.value(o)
            .item()
            .ok_or_else(|| Error::Contract("objective is not scalar".into()))
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut probe = params.clone();
    for (name, tensor) in params.iter() {
        let grad = grads
            .get(name)
            .ok_or_else(|| Error::Contract(format!("no gradient recorded for {name}")))?;
        for idx in 0..tensor.len() {
            let orig = tensor.data()[idx];
            let slot = |p: &mut NamedTensors, v: f64| {
                p.get_mut(name).expect("probe mirrors params").data_mut()[idx] = v
            };
            slot(&mut probe, orig + h);
            let plus = eval(&probe)?;
            slot(&mut probe, orig - h);
            let minus = eval(&probe)?;
            slot(&mut probe, orig);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "objective while probing {name}[{idx}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grad.data()[idx];
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = err;
                report.worst = Some((name.to_string(), idx));
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{RandomStream, Tensor};

    #[test]
    fn quadratic_bowl() {
        let mut params = NamedTensors::new();
        params.insert("x", Tensor::from_vec(vec![0.3, -1.2, 2.5]));
        let report = grad_check(&params, 1e-5, |tape, p| {
            let ids = tape.params(p)?;
            let sq = tape.mul(ids[0], ids[0])?;
            tape.sum(sq)
        })
        .unwrap();
        assert!(report.max_relative_error < 1e-8, "{report:?}");
        assert_eq!(report.checked, 3);
    }

    #[test]
    fn squash_then_norm() {
        let mut rng = RandomStream::new(5, 0);
        for _ in 0..10 {
            let mut params = NamedTensors::new();
            let data: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
            params.insert("s", Tensor::new(vec![3, 4], data).unwrap());
            let weights = Tensor::from_vec(vec![0.7, -1.3, 2.1]);
            let report = grad_check(&params, 1e-5, |tape, p| {
                let ids = tape.params(p)?;
                let v = tape.squash_rows(ids[0])?;
                let n = tape.row_norms(v)?;
                tape.dot_const(n, weights.clone())
            })
            .unwrap();
            assert!(report.max_relative_error < 1e-6, "{report:?}");
        }
    }

    #[test]
    fn routing_primitives() {
        let mut rng = RandomStream::new(9, 0);
        let (n, j, l) = (5, 3, 4);
        let mut params = NamedTensors::new();
        params.insert(
            "pred",
            Tensor::new(
                vec![n, j, l],
                (0..n * j * l).map(|_| rng.normal()).collect(),
            )
            .unwrap(),
        );
        params.insert(
            "logits",
            Tensor::new(vec![n, j], (0..n * j).map(|_| rng.normal()).collect()).unwrap(),
        );
        let w = Tensor::new(vec![n, j], (0..n * j).map(|_| rng.normal()).collect()).unwrap();
        let report = grad_check(&params, 1e-5, |tape, p| {
            let ids = tape.params(p)?;
            let c = tape.softmax_rows(ids[1])?;
            let s = tape.weighted_sum(c, ids[0])?;
            let v = tape.squash_rows(s)?;
            let a = tape.agreement(ids[0], v)?;
            let b = tape.add(ids[1], a)?;
            tape.dot_const(b, w.clone())
        })
        .unwrap();
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }

    #[test]
    fn non_finite_names_parameter() {
        let mut params = NamedTensors::new();
        params.insert("x", Tensor::scalar(1.0));
        let mut calls = 0;
        let err = grad_check(&params, 1e-5, |tape, p| {
            calls += 1;
            let ids = tape.params(p)?;
            if calls > 1 {
                tape.affine(ids[0], f64::INFINITY, 0.0)
            } else {
                tape.affine(ids[0], 1.0, 0.0)
            }
        })
        .unwrap_err();
        assert!(err.to_string().contains("x[0]"), "{err}");
    }
}
