//! Edge classification head and the weighted cross-entropy objective.

use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_in_place, ParameterStore, Tensor, TensorError};

pub const WEIGHT_PARAM: &str = "predictor.w";
pub const BIAS_PARAM: &str = "predictor.b";
pub const HIDDEN_WEIGHT_PARAM: &str = "predictor.hidden.w";
pub const HIDDEN_BIAS_PARAM: &str = "predictor.hidden.b";

/// Probabilities below this are clamped before taking the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub probabilities: Vec<f64>,
    pub predicted_level: usize,
    /// Gap between the two largest probabilities.
    pub margin: f64,
}

impl PredictionResult {
    pub fn from_probabilities(probabilities: Vec<f64>) -> Self {
        let mut predicted_level = 0;
        for (i, &p) in probabilities.iter().enumerate() {
            if p > probabilities[predicted_level] {
                predicted_level = i;
            }
        }
        let top = probabilities[predicted_level];
        let second = probabilities
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != predicted_level)
            .map(|(_, &p)| p)
            .fold(0.0, f64::max);
        Self {
            probabilities,
            predicted_level,
            margin: top - second,
        }
    }
}

fn affine(w: &Tensor, b: &[f64], x: &[f64]) -> Result<Vec<f64>, TensorError> {
    let (rows, cols) = w.dims();
    if cols != x.len() || rows != b.len() {
        return Err(TensorError::Shape {
            op: "predict_edge",
            left: vec![rows, cols],
            right: vec![x.len()],
        });
    }
    Ok((0..rows)
        .map(|r| w.row(r).iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b[r])
        .collect())
}

/// `softmax(W [h_u ; h_v] + b)` for the directed pair `u -> v`, with an
/// optional ReLU hidden layer when the store holds one.
pub fn predict_edge(h_u: &[f64], h_v: &[f64], store: &ParameterStore) -> Result<PredictionResult, TensorError> {
    if h_u.len() != h_v.len() {
        return Err(TensorError::Shape {
            op: "predict_edge",
            left: vec![h_u.len()],
            right: vec![h_v.len()],
        });
    }
    let get = |name: &str| store.get(name).ok_or_else(|| TensorError::UnknownParameter(name.to_string()));
    let mut x: Vec<f64> = h_u.iter().chain(h_v).copied().collect();
    if store.contains(HIDDEN_WEIGHT_PARAM) {
        x = affine(get(HIDDEN_WEIGHT_PARAM)?, get(HIDDEN_BIAS_PARAM)?.values(), &x)?
            .into_iter()
            .map(|z| z.max(0.0))
            .collect();
    }
    let mut logits = affine(get(WEIGHT_PARAM)?, get(BIAS_PARAM)?.values(), &x)?;
    softmax_in_place(&mut logits);
    Ok(PredictionResult::from_probabilities(logits))
}

/// Inverse class frequencies rescaled to average one over the classes.
/// Classes absent from `truths` get weight one.
pub fn class_weights(truths: &[usize], levels: usize) -> Vec<f64> {
    let mut counts = vec![0usize; levels];
    for &t in truths {
        counts[t] += 1;
    }
    let inv: Vec<f64> = counts.iter().map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 }).collect();
    let present = counts.iter().filter(|&&c| c > 0).count();
    let total: f64 = inv.iter().sum();
    inv.iter()
        .map(|&w| if w == 0.0 { 1.0 } else { w * present as f64 / total })
        .collect()
}

/// `-sum_e beta[truth_e] ln p_e[truth_e] + lambda * sum of squared parameters`.
pub fn weighted_ce_loss(
    predictions: &[PredictionResult],
    truths: &[usize],
    beta: &[f64],
    lambda: f64,
    store: &ParameterStore,
) -> Result<f64, TensorError> {
    if predictions.len() != truths.len() {
        return Err(TensorError::Alignment {
            op: "weighted_ce_loss",
            messages: predictions.len(),
            weights: truths.len(),
            segments: truths.len(),
        });
    }
    let mut data = 0.0;
    for (p, &t) in predictions.iter().zip(truths) {
        let prob = *p.probabilities.get(t).ok_or(TensorError::Index {
            op: "weighted_ce_loss",
            index: t,
            bound: p.probabilities.len(),
        })?;
        data -= beta[t] * prob.max(LOG_FLOOR).ln();
    }
    Ok(data + lambda * store.squared_norm())
}
