//! Classification metrics and random baselines.
//!
//! Precision, recall and F1 are 0 when their denominator is 0. Macro values
//! are unweighted means over classes. The confusion matrix is indexed
//! `[truth][prediction]`; it holds `f64` so that baseline reports can carry
//! mean counts over trials.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub confusion: Vec<Vec<f64>>,
    pub n_eval: usize,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Metrics for `pred` against `truth`, both class indices into `classes`.
pub fn evaluate(truth: &[usize], pred: &[usize], classes: &[&str]) -> EvalReport {
    assert_eq!(
        truth.len(),
        pred.len(),
        "truth and predictions differ in length"
    );
    let k = classes.len();
    let mut confusion = vec![vec![0.0; k]; k];
    for (&t, &p) in truth.iter().zip(pred) {
        confusion[t][p] += 1.0;
    }
    let n = truth.len();
    let per_class = (0..k)
        .map(|c| {
            let tp = confusion[c][c];
            let predicted: f64 = (0..k).map(|r| confusion[r][c]).sum();
            let actual: f64 = confusion[c].iter().sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, actual);
            ClassMetrics {
                class: classes[c].to_string(),
                precision,
                recall,
                f1: ratio(2.0 * precision * recall, precision + recall),
                support: actual,
            }
        })
        .collect();
    let trace: f64 = (0..k).map(|c| confusion[c][c]).sum();
    finish(per_class, confusion, ratio(trace, n as f64), n)
}

fn finish(
    per_class: Vec<ClassMetrics>,
    confusion: Vec<Vec<f64>>,
    accuracy: f64,
    n: usize,
) -> EvalReport {
    let k = per_class.len().max(1) as f64;
    EvalReport {
        macro_precision: per_class.iter().map(|m| m.precision).sum::<f64>() / k,
        macro_recall: per_class.iter().map(|m| m.recall).sum::<f64>() / k,
        macro_f1: per_class.iter().map(|m| m.f1).sum::<f64>() / k,
        per_class,
        accuracy,
        confusion,
        n_eval: n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMode {
    /// Each class with probability `1/K`.
    Uniform,
    /// Each class with its eval-set frequency.
    Biased,
}

impl fmt::Display for BaselineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineMode::Uniform => "uniform",
            BaselineMode::Biased => "biased",
        })
    }
}

impl FromStr for BaselineMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(BaselineMode::Uniform),
            "biased" => Ok(BaselineMode::Biased),
            other => Err(format!("unknown baseline mode {other:?}")),
        }
    }
}

/// Mean report over `trials` random predictors. Trial `t` draws from
/// ChaCha8 seeded with `seed` on stream `t`, so results do not depend on
/// thread scheduling.
pub fn random_baseline(
    truth: &[usize],
    classes: &[&str],
    mode: BaselineMode,
    seed: u64,
    trials: usize,
) -> EvalReport {
    assert!(trials >= 1, "trials must be at least 1");
    let k = classes.len();
    let weights: Vec<f64> = match mode {
        BaselineMode::Uniform => vec![1.0; k],
        BaselineMode::Biased => {
            let mut w = vec![0.0; k];
            for &t in truth {
                w[t] += 1.0;
            }
            w
        }
    };
    let dist = WeightedIndex::new(&weights).ok();
    let reports: Vec<EvalReport> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let pred: Vec<usize> = truth
                .iter()
                .map(|_| match &dist {
                    Some(d) => d.sample(&mut rng),
                    None => rng.gen_range(0..k),
                })
                .collect();
            evaluate(truth, &pred, classes)
        })
        .collect();
    mean_report(&reports)
}

/// Element-wise mean of reports with the same class set.
pub fn mean_report(reports: &[EvalReport]) -> EvalReport {
    let n = reports.len() as f64;
    let first = &reports[0];
    let k = first.per_class.len();
    let avg = |f: &dyn Fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let per_class = (0..k)
        .map(|c| ClassMetrics {
            class: first.per_class[c].class.clone(),
            precision: avg(&|r| r.per_class[c].precision),
            recall: avg(&|r| r.per_class[c].recall),
            f1: avg(&|r| r.per_class[c].f1),
            support: first.per_class[c].support,
        })
        .collect();
    let confusion = (0..k)
        .map(|i| (0..k).map(|j| avg(&|r| r.confusion[i][j])).collect())
        .collect();
    EvalReport {
        per_class,
        macro_precision: avg(&|r| r.macro_precision),
        macro_recall: avg(&|r| r.macro_recall),
        macro_f1: avg(&|r| r.macro_f1),
        accuracy: avg(&|r| r.accuracy),
        confusion,
        n_eval: first.n_eval,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ABC: &[&str] = &["A", "B", "C"];

    #[test]
    fn perfect_predictions() {
        let t = [0, 1, 2, 1];
        let r = evaluate(&t, &t, ABC);
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.n_eval, 4);
    }

    #[test]
    fn hand_confusion_example() {
        let r = evaluate(&[0, 0, 1, 1, 2, 2], &[0, 1, 1, 1, 2, 0], ABC);
        let f1: Vec<f64> = r.per_class.iter().map(|m| m.f1).collect();
        assert!((f1[0] - 0.5).abs() < 1e-12);
        assert!((f1[1] - 0.8).abs() < 1e-12);
        assert!((f1[2] - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.macro_f1 - 0.6556).abs() < 1e-4);
        assert!((r.accuracy - 4.0 / 6.0).abs() < 1e-12);
        let total: f64 = r.confusion.iter().flatten().sum();
        assert_eq!(total, 6.0);
    }

    #[test]
    fn constant_predictor_on_balanced_classes() {
        let truth = [0, 0, 1, 1, 2, 2];
        let r = evaluate(&truth, &[0; 6], ABC);
        assert!((r.accuracy - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.macro_f1 - 1.0 / 6.0).abs() < 1e-12);
        assert_eq!(r.per_class[1].precision, 0.0);
    }

    #[test]
    fn baseline_is_seeded() {
        let truth: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let a = random_baseline(&truth, ABC, BaselineMode::Biased, 5, 50);
        let b = random_baseline(&truth, ABC, BaselineMode::Biased, 5, 50);
        assert_eq!(a, b);
        let total: f64 = a.confusion.iter().flatten().sum();
        assert!((total - 30.0).abs() < 1e-9);
    }
}
