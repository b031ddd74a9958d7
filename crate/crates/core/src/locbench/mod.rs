//! Geo-aware classification and regression benchmark harness: dataset files,
//! synthetic generators, training loops, prior combination and metrics.

mod io;
mod model;
mod synth;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::LocationDeg;
use crate::nn::log_softmax;

pub use io::{
    attach_vectors, load_dataset_csv, load_predictions_csv, read_vector_csv, save_dataset_csv, save_predictions_csv,
    save_vector_csv, VectorColumn,
};
pub use model::{
    evaluate_classifier, evaluate_regressor, load_model, save_model, train_location_classifier,
    train_location_regressor, ClassificationEval, EpochLog, LocationClassifier, LocationRegressor, NetConfig,
    RegressionEval, TrainLog, TrainedModel, sidecar_path,
};
pub use synth::{synth_dataset, synth_image_logprobs, SynthKind, SynthParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Classification => "classification",
            Task::Regression => "regression",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Domain(format!("split must be train, val or test, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub id: String,
    pub loc: LocationDeg,
    pub split: Split,
    pub label: Option<usize>,
    pub target: Option<f64>,
    pub image_logprobs: Option<Vec<f64>>,
    pub image_embedding: Option<Vec<f64>>,
}

impl DatasetRecord {
    pub fn classification(id: impl Into<String>, loc: LocationDeg, split: Split, label: usize) -> Self {
        DatasetRecord {
            id: id.into(),
            loc,
            split,
            label: Some(label),
            target: None,
            image_logprobs: None,
            image_embedding: None,
        }
    }

    pub fn regression(id: impl Into<String>, loc: LocationDeg, split: Split, target: f64) -> Self {
        DatasetRecord {
            label: None,
            target: Some(target),
            ..Self::classification(id, loc, split, 0)
        }
    }

    pub fn task(&self) -> Option<Task> {
        match (self.label, self.target) {
            (Some(_), None) => Some(Task::Classification),
            (None, Some(_)) => Some(Task::Regression),
            _ => None,
        }
    }
}

/// One evaluated record: classification fills `hit1`/`rank`, regression fills
/// `abs_err`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub id: String,
    pub loc: LocationDeg,
    pub hit1: Option<bool>,
    pub rank: Option<usize>,
    pub abs_err: Option<f64>,
}

/// Metric block; serializes to `{task, n, top1, top3, mrr}` or
/// `{task, n, r2, mae, rmse}`. A degenerate R² is written as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase", deny_unknown_fields)]
pub enum MetricsReport {
    Classification { n: usize, top1: f64, top3: f64, mrr: f64 },
    Regression { n: usize, r2: Option<f64>, mae: f64, rmse: f64 },
}

impl MetricsReport {
    pub fn classification(scores: &[Vec<f64>], labels: &[usize]) -> Self {
        let pairs: Vec<(&[f64], usize)> = scores.iter().map(Vec::as_slice).zip(labels.iter().copied()).collect();
        MetricsReport::Classification {
            n: labels.len(),
            top1: topk_accuracy(&pairs, 1),
            top3: topk_accuracy(&pairs, 3),
            mrr: mrr(&pairs),
        }
    }

    pub fn regression(preds: &[f64], targets: &[f64]) -> Result<Self> {
        let m = regression_metrics(preds, targets)?;
        Ok(MetricsReport::Regression {
            n: preds.len(),
            r2: (!m.degenerate_variance).then_some(m.r2),
            mae: m.mae,
            rmse: m.rmse,
        })
    }

    pub fn task(&self) -> Task {
        match self {
            MetricsReport::Classification { .. } => Task::Classification,
            MetricsReport::Regression { .. } => Task::Regression,
        }
    }

    pub fn n(&self) -> usize {
        match *self {
            MetricsReport::Classification { n, .. } | MetricsReport::Regression { n, .. } => n,
        }
    }

    pub fn top1(&self) -> Option<f64> {
        match *self {
            MetricsReport::Classification { top1, .. } => Some(top1),
            MetricsReport::Regression { .. } => None,
        }
    }

    pub fn r2(&self) -> Option<f64> {
        match *self {
            MetricsReport::Regression { r2, .. } => r2,
            MetricsReport::Classification { .. } => None,
        }
    }
}

/// Product-rule combination in log space: `log p_img + log p_loc`,
/// renormalized with log-sum-exp.
pub fn combine_priors(image_logprobs: &[f64], loc_logprobs: &[f64]) -> Result<Vec<f64>> {
    if image_logprobs.len() != loc_logprobs.len() {
        return Err(Error::Shape(format!(
            "image has {} classes, location prior has {}",
            image_logprobs.len(),
            loc_logprobs.len()
        )));
    }
    if image_logprobs.iter().any(|v| !v.is_finite() && *v != f64::NEG_INFINITY)
        || loc_logprobs.iter().any(|v| !v.is_finite() && *v != f64::NEG_INFINITY)
    {
        return Err(Error::NonFinite("log-probabilities"));
    }
    let sum: Vec<f64> = image_logprobs.iter().zip(loc_logprobs).map(|(a, b)| a + b).collect();
    if sum.iter().all(|v| *v == f64::NEG_INFINITY) {
        return Err(Error::Domain("image and location priors have disjoint support".into()));
    }
    Ok(log_softmax(&sum))
}

/// 1-based rank of `label`; classes scoring higher, or equal with a lower
/// index, come first.
pub fn rank_of(scores: &[f64], label: usize) -> usize {
    let s = scores[label];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < label))
        .count()
}

/// Fraction of records whose label ranks within the top `k`.
pub fn topk_accuracy(scores: &[(&[f64], usize)], k: usize) -> f64 {
    if scores.is_empty() {
        return f64::NAN;
    }
    let hits: usize = scores.par_iter().map(|(s, l)| usize::from(rank_of(s, *l) <= k)).sum();
    hits as f64 / scores.len() as f64
}

/// Mean reciprocal rank under the [`rank_of`] tie rule.
pub fn mrr(scores: &[(&[f64], usize)]) -> f64 {
    if scores.is_empty() {
        return f64::NAN;
    }
    let recips: Vec<f64> = scores.par_iter().map(|(s, l)| 1.0 / rank_of(s, *l) as f64).collect();
    recips.iter().sum::<f64>() / scores.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionMetrics {
    /// NaN when the targets have zero variance.
    pub r2: f64,
    pub mae: f64,
    pub rmse: f64,
    pub degenerate_variance: bool,
}

pub fn regression_metrics(preds: &[f64], targets: &[f64]) -> Result<RegressionMetrics> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets (need equal, non-empty)",
            preds.len(),
            targets.len()
        )));
    }
    let n = preds.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let ss_tot: f64 = targets.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = preds.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum();
    let mae = preds.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let degenerate = ss_tot == 0.0;
    Ok(RegressionMetrics {
        r2: if degenerate { f64::NAN } else { 1.0 - ss_res / ss_tot },
        mae,
        rmse: (ss_res / n).sqrt(),
        degenerate_variance: degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ln(p: &[f64]) -> Vec<f64> {
        p.iter().map(|v| v.ln()).collect()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn combine_examples() {
        let c = combine_priors(&ln(&[0.7, 0.3]), &ln(&[0.5, 0.5])).unwrap();
        assert!(close(&c, &ln(&[0.7, 0.3]), 1e-12));
        let c = combine_priors(&ln(&[0.6, 0.4]), &ln(&[0.25, 0.75])).unwrap();
        assert!(close(&c, &ln(&[1.0 / 3.0, 2.0 / 3.0]), 1e-12));
        let c = combine_priors(&ln(&[0.2, 0.3, 0.5]), &ln(&[0.0, 0.0, 1.0])).unwrap();
        let p: Vec<f64> = c.iter().map(|v| v.exp()).collect();
        assert!(close(&p, &[0.0, 0.0, 1.0], 1e-12));
        assert!(matches!(combine_priors(&[0.0], &[0.0, 0.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn ranking_examples() {
        let perfect = [vec![0.9, 0.1], vec![0.2, 0.8]];
        let pairs: Vec<(&[f64], usize)> = vec![(&perfect[0], 0), (&perfect[1], 1)];
        assert_eq!(topk_accuracy(&pairs, 1), 1.0);
        assert_eq!(mrr(&pairs), 1.0);

        let flat = vec![0.25; 4];
        let pairs: Vec<(&[f64], usize)> = vec![(&flat, 0); 5];
        assert_eq!(topk_accuracy(&pairs, 1), 1.0);

        let s = [vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let pairs: Vec<(&[f64], usize)> = vec![(&s[0], 0), (&s[1], 0), (&s[2], 1), (&s[3], 1)];
        assert_eq!(topk_accuracy(&pairs, 1), 0.5);
    }

    #[test]
    fn mrr_examples() {
        let s = vec![4.0, 3.0, 2.0, 1.0];
        let pairs: Vec<(&[f64], usize)> = vec![(&s, 0), (&s, 1), (&s, 3)];
        assert!((mrr(&pairs) - (1.0 + 0.5 + 0.25) / 3.0).abs() < 1e-12);
        let s: Vec<f64> = (0..10).map(|i| -(i as f64)).collect();
        assert!((mrr(&[(&s, 9)]) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn regression_examples() {
        let m = regression_metrics(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((m.r2, m.mae, m.rmse), (1.0, 0.0, 0.0));
        let m = regression_metrics(&[2.0; 3], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.r2, 0.0);
        let m = regression_metrics(&[1.0, 1.0], &[0.0, 2.0]).unwrap();
        assert_eq!((m.r2, m.mae, m.rmse), (0.0, 1.0, 1.0));
        let m = regression_metrics(&[1.0, 1.5], &[1.0, 1.0]).unwrap();
        assert!(m.r2.is_nan() && m.degenerate_variance);
        assert!(regression_metrics(&[], &[]).is_err());
    }

    #[test]
    fn metrics_json_keys() {
        let c = MetricsReport::classification(&[vec![0.0, 1.0]], &[1]);
        let v: serde_json::Value = serde_json::to_value(&c).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["mrr", "n", "task", "top1", "top3"]);
        assert_eq!(v["task"], "classification");

        let r = MetricsReport::regression(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["mae", "n", "r2", "rmse", "task"]);
        assert!(v["r2"].is_null());
        let back: MetricsReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }

    fn logits(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-20.0..20.0f64, n)
    }

    proptest! {
        #[test]
        fn combined_is_a_distribution(a in logits(6), b in logits(6)) {
            let c = combine_priors(&log_softmax(&a), &log_softmax(&b)).unwrap();
            let total: f64 = c.iter().map(|v| v.exp()).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn uniform_prior_keeps_ranking(a in logits(7)) {
            let img = log_softmax(&a);
            let c = combine_priors(&img, &vec![-(7f64).ln(); 7]).unwrap();
            for l in 0..7 {
                prop_assert_eq!(rank_of(&img, l), rank_of(&c, l));
            }
        }

        #[test]
        fn topk_is_monotone_and_mrr_bounded(
            rows in proptest::collection::vec((logits(5), 0usize..5), 1..40)
        ) {
            let pairs: Vec<(&[f64], usize)> = rows.iter().map(|(s, l)| (s.as_slice(), *l)).collect();
            let t1 = topk_accuracy(&pairs, 1);
            let t3 = topk_accuracy(&pairs, 3);
            let m = mrr(&pairs);
            prop_assert!(t1 <= t3);
            prop_assert!(m >= t1 && m <= 1.0);
            let mut rev = pairs.clone();
            rev.reverse();
            prop_assert!((mrr(&rev) - m).abs() <= 1e-12);
        }
    }
}
