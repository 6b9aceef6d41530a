//! Fusion of a node's per-snapshot embeddings into one vector: position-aware
//! multi-head attention, or the mean and exponential-decay alternatives.
//!
//! As in [`crate::spatial`], these per-node functions are the reference for
//! the batched implementation in [`crate::model`].

use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_in_place, Tensor, TensorError};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemporalMode {
    #[default]
    Attention,
    /// Equal weight for every snapshot.
    Mean,
    /// Weights decaying exponentially with distance from the last snapshot.
    Decay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemporalConfig {
    pub mode: TemporalMode,
    pub heads: usize,
    /// Dropout on each head's output during training.
    pub dropout: f64,
    /// Time scale of [`TemporalMode::Decay`], in snapshots.
    pub decay_tau: f64,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        Self {
            mode: TemporalMode::Attention,
            heads: 8,
            dropout: 0.5,
            decay_tau: 2.0,
        }
    }
}

impl TemporalConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.mode == TemporalMode::Attention {
            if self.heads == 0 || dim % self.heads != 0 {
                return Err(Error::config(format!(
                    "{} attention heads do not divide embedding dimension {dim}",
                    self.heads
                )));
            }
            if !(0.0..1.0).contains(&self.dropout) {
                return Err(Error::config("temporal dropout must lie in [0, 1)"));
            }
        }
        if self.mode == TemporalMode::Decay && !(self.decay_tau > 0.0) {
            return Err(Error::config(format!("decay scale {} must be positive", self.decay_tau)));
        }
        Ok(())
    }
}

/// Table of learned per-snapshot offsets (`snapshots x dim`).
pub const POSITION_PARAM: &str = "temporal.pos";

/// Names of the query, key and value matrices of head `head` (1-based),
/// each stored `head_dim x dim`.
pub fn head_param_names(head: usize) -> [String; 3] {
    [
        format!("temporal.h{head}.w_q"),
        format!("temporal.h{head}.w_k"),
        format!("temporal.h{head}.w_v"),
    ]
}

fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|r| w.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// Adds row `i` of the position table to element `i` of the sequence.
pub fn add_positional(sequence: &[Vec<f64>], positions: &Tensor) -> Result<Vec<Vec<f64>>, TensorError> {
    let (n, d) = positions.dims();
    if sequence.len() != n || sequence.iter().any(|h| h.len() != d) {
        return Err(TensorError::Shape {
            op: "add_positional",
            left: vec![sequence.len(), sequence.first().map_or(0, Vec::len)],
            right: vec![n, d],
        });
    }
    Ok(sequence
        .iter()
        .enumerate()
        .map(|(i, h)| h.iter().zip(positions.row(i)).map(|(a, b)| a + b).collect())
        .collect())
}

/// Softmax over `i` of `(W_Q x_n) . (W_K x_i) / sqrt(head_dim)`, where `x_n`
/// is the last element of the sequence.
pub fn attention_scores(sequence: &[Vec<f64>], w_q: &Tensor, w_k: &Tensor) -> Result<Vec<f64>, TensorError> {
    let last = sequence.last().ok_or(TensorError::Empty("attention_scores"))?;
    let q = matvec(w_q, last);
    let scale = (q.len() as f64).sqrt();
    let mut logits: Vec<f64> = sequence
        .iter()
        .map(|x| matvec(w_k, x).iter().zip(&q).map(|(k, q)| k * q).sum::<f64>() / scale)
        .collect();
    softmax_in_place(&mut logits);
    Ok(logits)
}

/// `sum_i alpha_i W_V x_i`.
pub fn temporal_fuse(sequence: &[Vec<f64>], alpha: &[f64], w_v: &Tensor) -> Result<Vec<f64>, TensorError> {
    if alpha.len() != sequence.len() {
        return Err(TensorError::Alignment {
            op: "temporal_fuse",
            messages: sequence.len(),
            weights: alpha.len(),
            segments: sequence.len(),
        });
    }
    let mut out = vec![0.0; w_v.rows()];
    for (x, &a) in sequence.iter().zip(alpha) {
        for (o, v) in out.iter_mut().zip(matvec(w_v, x)) {
            *o += a * v;
        }
    }
    Ok(out)
}

/// Concatenated head outputs. Each head is `(W_Q, W_K, W_V)`.
pub fn multi_head(sequence: &[Vec<f64>], heads: &[(Tensor, Tensor, Tensor)]) -> Result<Vec<f64>, TensorError> {
    let mut out = Vec::new();
    for (w_q, w_k, w_v) in heads {
        let alpha = attention_scores(sequence, w_q, w_k)?;
        out.extend(temporal_fuse(sequence, &alpha, w_v)?);
    }
    Ok(out)
}

pub fn variant_mean(sequence: &[Vec<f64>]) -> Result<Vec<f64>, TensorError> {
    let weights = vec![1.0 / sequence.len() as f64; sequence.len()];
    weighted_mean(sequence, &weights, "variant_mean")
}

/// Normalized weights `exp((i - (n - 1)) / tau)` for positions `0..n`.
pub fn decay_weights(n: usize, tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::config(format!("decay scale {tau} must be positive")));
    }
    let raw: Vec<f64> = (0..n).map(|i| ((i as f64 - (n as f64 - 1.0)) / tau).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

pub fn variant_decay(sequence: &[Vec<f64>], tau: f64) -> Result<Vec<f64>> {
    let weights = decay_weights(sequence.len(), tau)?;
    Ok(weighted_mean(sequence, &weights, "variant_decay")?)
}

fn weighted_mean(sequence: &[Vec<f64>], weights: &[f64], op: &'static str) -> Result<Vec<f64>, TensorError> {
    let first = sequence.first().ok_or(TensorError::Empty(op))?;
    let mut out = vec![0.0; first.len()];
    for (x, w) in sequence.iter().zip(weights) {
        for (o, v) in out.iter_mut().zip(x) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// One attention weight, for export.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub node: usize,
    /// 1-based head index.
    pub head: usize,
    /// 0-based snapshot position.
    pub timeslot: usize,
    pub score: f64,
}
