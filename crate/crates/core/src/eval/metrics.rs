use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::PredictionResult;

/// Counts indexed `[truth][prediction]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: Vec<Vec<u64>>,
}

impl Confusion {
    pub fn new(levels: usize) -> Self {
        Self {
            counts: vec![vec![0; levels]; levels],
        }
    }

    pub fn from_pairs(truths: &[usize], predictions: &[usize], levels: usize) -> Self {
        let mut c = Self::new(levels);
        for (&t, &p) in truths.iter().zip(predictions) {
            c.counts[t][p] += 1;
        }
        c
    }

    /// Binary confusion from `(tp, tn, fp, fn)` with level 1 positive.
    pub fn binary(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self {
            counts: vec![vec![tn, fp], vec![fn_, tp]],
        }
    }

    pub fn levels(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// `(tp, fp, fn)` of `class` against the rest.
    pub fn one_vs_rest(&self, class: usize) -> (u64, u64, u64) {
        let tp = self.counts[class][class];
        let fp = (0..self.levels()).map(|t| self.counts[t][class]).sum::<u64>() - tp;
        let fn_ = self.counts[class].iter().sum::<u64>() - tp;
        (tp, fp, fn_)
    }
}

/// Matthews correlation coefficient:
/// `(TP TN - FP FN) / sqrt((TP+FP)(TP+FN)(TN+FP)(TN+FN))` for two classes,
/// the covariance form over the full confusion matrix for more. A zero
/// denominator yields 0.
pub fn mcc(c: &Confusion) -> f64 {
    let k = c.levels();
    if k == 2 {
        let [tn, fp] = [c.counts[0][0] as f64, c.counts[0][1] as f64];
        let [fn_, tp] = [c.counts[1][0] as f64, c.counts[1][1] as f64];
        let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
        return if den == 0.0 { 0.0 } else { (tp * tn - fp * fn_) / den };
    }
    let s = c.total() as f64;
    let correct: f64 = (0..k).map(|i| c.counts[i][i] as f64).sum();
    let true_k: Vec<f64> = (0..k).map(|i| c.counts[i].iter().sum::<u64>() as f64).collect();
    let pred_k: Vec<f64> = (0..k).map(|j| (0..k).map(|i| c.counts[i][j]).sum::<u64>() as f64).collect();
    let tp: f64 = true_k.iter().zip(&pred_k).map(|(t, p)| t * p).sum();
    let num = correct * s - tp;
    let den = ((s * s - pred_k.iter().map(|p| p * p).sum::<f64>()) * (s * s - true_k.iter().map(|t| t * t).sum::<f64>())).sqrt();
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Mean per-class recall over classes that occur in the truth.
pub fn balanced_accuracy(c: &Confusion) -> f64 {
    let recalls: Vec<f64> = (0..c.levels())
        .filter_map(|i| {
            let total: u64 = c.counts[i].iter().sum();
            (total > 0).then(|| c.counts[i][i] as f64 / total as f64)
        })
        .collect();
    if recalls.is_empty() {
        0.0
    } else {
        recalls.iter().sum::<f64>() / recalls.len() as f64
    }
}

/// Unweighted mean over classes of `TP / (TP + (FP + FN) / 2)`; a class
/// with no true, predicted or missed instances scores 0.
pub fn f1_macro(c: &Confusion) -> f64 {
    let k = c.levels();
    let total: f64 = (0..k)
        .map(|i| {
            let (tp, fp, fn_) = c.one_vs_rest(i);
            let den = tp as f64 + (fp + fn_) as f64 / 2.0;
            if den == 0.0 {
                0.0
            } else {
                tp as f64 / den
            }
        })
        .sum();
    total / k as f64
}

/// Area under the ROC curve by the rank formula with average ranks for
/// ties.
pub fn auc(scores: &[f64], positives: &[bool]) -> Result<f64> {
    if scores.len() != positives.len() {
        return Err(Error::Metric("auc: scores and labels differ in length".into()));
    }
    let n_pos = positives.iter().filter(|&&p| p).count();
    let n_neg = positives.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("auc undefined: only one class present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| positives[k]).count() as f64;
        i = j + 1;
    }
    let p = n_pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n_neg as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mcc: f64,
    pub auc: f64,
    pub ba: f64,
    pub f1_macro: f64,
    pub confusion: Confusion,
}

/// All four metrics. AUC scores are the probability of the top level.
pub fn evaluate(predictions: &[PredictionResult], truths: &[usize], levels: usize) -> Result<Metrics> {
    let predicted: Vec<usize> = predictions.iter().map(|p| p.predicted_level).collect();
    let confusion = Confusion::from_pairs(truths, &predicted, levels);
    let scores: Vec<f64> = predictions.iter().map(|p| p.probabilities[levels - 1]).collect();
    let positives: Vec<bool> = truths.iter().map(|&t| t == levels - 1).collect();
    Ok(Metrics {
        mcc: mcc(&confusion),
        auc: auc(&scores, &positives)?,
        ba: balanced_accuracy(&confusion),
        f1_macro: f1_macro(&confusion),
        confusion,
    })
}
