//! Linear evaluation: frozen embeddings, logistic-regression probe, metrics
//! and the repeated-run protocol.

mod probe;
mod protocol;

pub use probe::{column_stats, fit_probe, ProbeConfig, ProbeModel};
pub use protocol::{protocol_run, raw_feature_run, run_protocol, ProtocolOptions, RunRecord};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    MicroF1,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(Metric::Accuracy),
            "micro_f1" => Ok(Metric::MicroF1),
            other => Err(Error::InvalidArgument(format!("unknown metric {other:?}"))),
        }
    }
}

/// Pooled true positives, false positives and false negatives over classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    /// Single-label multiclass counts: each wrong prediction is one false
    /// positive for the predicted class and one false negative for the true one.
    pub fn multiclass(pred: &[usize], truth: &[usize]) -> Counts {
        let tp = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
        let wrong = pred.len() - tp;
        Counts { tp, fp: wrong, fn_: wrong }
    }
}

/// `2TP / (2TP + FP + FN)`; zero when there is nothing to count.
pub fn micro_f1(c: Counts) -> Real {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * c.tp) as Real / denom as Real
    }
}

/// Scores the probe on `test_idx`.
pub fn evaluate(model: &ProbeModel, e: &Matrix, labels: &[i64], test_idx: &[usize], metric: Metric) -> Result<Real> {
    if test_idx.is_empty() {
        return Err(Error::EmptyEvaluationSet);
    }
    let truth = test_idx
        .iter()
        .map(|&i| match labels.get(i) {
            Some(&l) if l >= 0 => Ok(l as usize),
            _ => Err(Error::InvalidArgument(format!("test node {i} has no label"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let pred = model.predict(e, test_idx)?;
    let counts = Counts::multiclass(&pred, &truth);
    let accuracy = counts.tp as Real / truth.len() as Real;
    let f1 = micro_f1(counts);
    assert!(
        (accuracy - f1).abs() <= 1e-12,
        "micro-F1 {f1} differs from accuracy {accuracy} on single-label predictions"
    );
    Ok(match metric {
        Metric::Accuracy => accuracy,
        Metric::MicroF1 => f1,
    })
}

/// Per-run scores with their mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: Metric,
    pub runs: Vec<Real>,
    pub mean: Real,
    pub std: Real,
    pub n_runs: usize,
    pub config_digest: String,
}

impl EvalReport {
    pub fn from_runs(metric: Metric, runs: Vec<Real>, config_digest: impl Into<String>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::InvalidArgument("a report needs at least one run".into()));
        }
        let n = runs.len() as Real;
        let mean = runs.iter().sum::<Real>() / n;
        let std = (runs.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / n).sqrt();
        Ok(EvalReport {
            metric,
            n_runs: runs.len(),
            runs,
            mean,
            std,
            config_digest: config_digest.into(),
        })
    }

    /// Pools the runs of two reports produced under the same config.
    pub fn merge(&self, other: &EvalReport) -> Result<EvalReport> {
        if self.config_digest != other.config_digest {
            return Err(Error::InvalidArgument(format!(
                "refusing to merge reports with config digests {} and {}",
                self.config_digest, other.config_digest
            )));
        }
        if self.metric != other.metric {
            return Err(Error::InvalidArgument("refusing to merge reports with different metrics".into()));
        }
        let runs = self.runs.iter().chain(&other.runs).copied().collect();
        EvalReport::from_runs(self.metric, runs, self.config_digest.clone())
    }

    /// Mean and standard deviation in percent, e.g. `83.10 ± 0.42`.
    pub fn summary(&self) -> String {
        format!("{:.2} ± {:.2}", 100.0 * self.mean, 100.0 * self.std)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn micro_f1_formula() {
        assert_eq!(micro_f1(Counts { tp: 1, fp: 1, fn_: 1 }), 0.5);
        assert_eq!(micro_f1(Counts::multiclass(&[0, 1, 2], &[0, 1, 2])), 1.0);
    }

    #[test]
    fn multiclass_micro_f1_is_accuracy() {
        let pred = [0, 2, 1, 1, 0, 2, 2];
        let truth = [0, 1, 1, 2, 0, 2, 0];
        let acc = 4.0 / 7.0;
        assert!((micro_f1(Counts::multiclass(&pred, &truth)) - acc).abs() < 1e-15);
    }

    #[test]
    fn single_run_has_zero_std() {
        let r = EvalReport::from_runs(Metric::Accuracy, vec![0.8], "d").unwrap();
        assert_eq!((r.mean, r.std, r.n_runs), (0.8, 0.0, 1));
    }

    #[test]
    fn population_std() {
        let r = EvalReport::from_runs(Metric::Accuracy, vec![0.7, 0.9], "d").unwrap();
        assert!((r.mean - 0.8).abs() < 1e-15);
        assert!((r.std - 0.1).abs() < 1e-15);
    }

    #[test]
    fn merge_checks_digest() {
        let a = EvalReport::from_runs(Metric::Accuracy, vec![0.7], "x").unwrap();
        let b = EvalReport::from_runs(Metric::Accuracy, vec![0.9], "x").unwrap();
        let c = EvalReport::from_runs(Metric::Accuracy, vec![0.9], "y").unwrap();
        assert_eq!(a.merge(&b).unwrap().n_runs, 2);
        assert!(a.merge(&c).is_err());
    }

    #[test]
    fn empty_test_set_rejected() {
        let m = ProbeModel {
            weights: Matrix::zeros(2, 1),
            bias: Matrix::zeros(1, 2),
            lambda: 1.0,
            mean: vec![0.0],
            scale: vec![1.0],
            objective: 0.0,
            iterations: 0,
            converged: true,
        };
        let e = Matrix::zeros(3, 1);
        assert!(matches!(evaluate(&m, &e, &[0, 1, 0], &[], Metric::Accuracy), Err(Error::EmptyEvaluationSet)));
        assert_eq!(evaluate(&m, &e, &[0, 1, 0], &[0, 2], Metric::Accuracy).unwrap(), 1.0);
    }
}
