use std::fmt;

use crate::connectivity::Label;

/// Confusion counts with SZ as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
}

impl ConfusionCounts {
    pub fn record(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::Sz, Label::Sz) => self.tp += 1,
            (Label::Sz, Label::Hc) => self.fn_ += 1,
            (Label::Hc, Label::Hc) => self.tn += 1,
            (Label::Hc, Label::Sz) => self.fp += 1,
        }
    }

    pub fn from_predictions(truth: &[Label], predicted: &[Label]) -> Self {
        let mut c = Self::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            c.record(t, p);
        }
        c
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
        self.fp += other.fp;
    }

    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.tn + self.fp
    }
}

/// Accuracy, sensitivity and specificity; `None` marks a metric whose
/// denominator is zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn compute_metrics(c: &ConfusionCounts) -> Metrics {
    Metrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
    }
}

/// Mean of each metric over the folds where it is defined.
pub fn mean_metrics(folds: &[Metrics]) -> Metrics {
    let mean = |get: fn(&Metrics) -> Option<f64>| {
        let vals: Vec<f64> = folds.iter().filter_map(get).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    Metrics {
        accuracy: mean(|m| m.accuracy),
        sensitivity: mean(|m| m.sensitivity),
        specificity: mean(|m| m.specificity),
    }
}

/// Four decimals, or `undefined`.
pub fn format_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"))
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "accuracy {}  sensitivity {}  specificity {}",
            format_metric(self.accuracy),
            format_metric(self.sensitivity),
            format_metric(self.specificity)
        )
    }
}

impl Metrics {
    /// `prefix.accuracy=...` lines at full precision.
    pub fn key_values(&self, prefix: &str) -> String {
        let v = |x: Option<f64>| x.map_or_else(|| "undefined".to_string(), |x| x.to_string());
        format!(
            "{prefix}.accuracy={}\n{prefix}.sensitivity={}\n{prefix}.specificity={}\n",
            v(self.accuracy),
            v(self.sensitivity),
            v(self.specificity)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_ratios() {
        let m = compute_metrics(&ConfusionCounts {
            tp: 8,
            fn_: 2,
            tn: 6,
            fp: 2,
        });
        assert_eq!(m.accuracy, Some(14.0 / 18.0));
        assert_eq!(m.sensitivity, Some(0.8));
        assert_eq!(m.specificity, Some(0.75));
        assert_eq!(format_metric(m.accuracy), "0.7778");
    }

    #[test]
    fn perfect_and_undefined() {
        let m = compute_metrics(&ConfusionCounts {
            tp: 3,
            fn_: 0,
            tn: 4,
            fp: 0,
        });
        assert_eq!(
            (m.accuracy, m.sensitivity, m.specificity),
            (Some(1.0), Some(1.0), Some(1.0))
        );
        let m = compute_metrics(&ConfusionCounts {
            tp: 0,
            fn_: 0,
            tn: 4,
            fp: 1,
        });
        assert_eq!(m.sensitivity, None);
        assert_eq!(format_metric(m.sensitivity), "undefined");
    }

    #[test]
    fn mean_skips_undefined() {
        let a = Metrics {
            accuracy: Some(1.0),
            sensitivity: None,
            specificity: Some(0.5),
        };
        let b = Metrics {
            accuracy: Some(0.5),
            sensitivity: Some(0.25),
            specificity: Some(0.5),
        };
        let m = mean_metrics(&[a, b]);
        assert_eq!(m.accuracy, Some(0.75));
        assert_eq!(m.sensitivity, Some(0.25));
    }
}
