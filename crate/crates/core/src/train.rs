//! Full-batch training with Adam and validation-based early stopping.

use std::io::{Read, Write};
use std::sync::Arc;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, ParameterStore, Tensor};
use crate::error::{Error, Result};
use crate::graph::{NodeId, Snapshot, TrustEdge};
use crate::model::{Mode, ModelConfig, Session, SnapshotPlan, TrustGuard};
use crate::predictor::{self, PredictionResult, LOG_FLOOR};
use crate::spatial::CoefficientRecord;
use crate::temporal::AttentionRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub adam: AdamConfig,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Coefficient of the squared-parameter penalty.
    pub l2: f64,
    /// Share of training edges held out, per class, for early stopping.
    pub validation_fraction: f64,
    /// Per-level loss weights; inverse class frequency when absent.
    pub class_weights: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            adam: AdamConfig::default(),
            max_epochs: 50,
            patience: 10,
            l2: 1e-5,
            validation_fraction: 0.05,
            class_weights: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::config("L2 coefficient must be non-negative"));
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return Err(Error::config("validation fraction must lie in [0, 0.5)"));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != self.model.levels || w.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::config("class weights must be positive, one per level"));
            }
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
    pub event: Option<String>,
}

/// A trained model with the final embeddings of every node.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub config: TrainConfig,
    pub model: TrustGuard,
    /// `node_count x output_dim`, computed without dropout.
    pub embeddings: Tensor,
    pub coefficients: Vec<CoefficientRecord>,
    pub attention: Vec<AttentionRecord>,
    pub history: Vec<EpochRecord>,
    /// Number of optimizer steps taken.
    pub steps: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config: TrainConfig,
    node_count: usize,
    sequence_len: usize,
}

fn split_validation(edges: &[TrustEdge], levels: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a11_da7e);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for level in 0..levels {
        let mut idx: Vec<usize> = (0..edges.len()).filter(|&i| edges[i].level == level).collect();
        idx.shuffle(&mut rng);
        let k = (idx.len() as f64 * fraction).round() as usize;
        val.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

struct Batch {
    sources: Arc<[usize]>,
    targets: Arc<[usize]>,
    truths: Arc<[usize]>,
    weights: Vec<f64>,
}

impl Batch {
    fn new(edges: &[TrustEdge], pick: &[usize], row_of: &[usize], beta: &[f64]) -> Self {
        Self {
            sources: pick.iter().map(|&i| row_of[edges[i].source]).collect(),
            targets: pick.iter().map(|&i| row_of[edges[i].target]).collect(),
            truths: pick.iter().map(|&i| edges[i].level).collect(),
            weights: pick.iter().map(|&i| beta[edges[i].level]).collect(),
        }
    }
}

/// Trains on the edges of `snapshots` (given in time order). Node ids must
/// lie below `node_count`.
pub fn train(snapshots: &[Snapshot], node_count: usize, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    let min = if config.model.static_graph { 1 } else { 2 };
    if snapshots.len() < min {
        return Err(Error::config(format!(
            "training needs at least {min} snapshots, got {}",
            snapshots.len()
        )));
    }
    let edges: Vec<TrustEdge> = snapshots.iter().flat_map(|s| s.edges().iter().copied()).collect();
    if edges.is_empty() {
        return Err(Error::EmptyTask("no training edges".into()));
    }
    let levels = config.model.levels;
    if let Some(e) = edges.iter().find(|e| e.level >= levels) {
        return Err(Error::config(format!("edge level {} exceeds {levels} levels", e.level)));
    }
    let mut model = TrustGuard::new(config.model.clone(), node_count, snapshots.len(), config.seed)?;
    let plans: Vec<SnapshotPlan> = snapshots.iter().map(SnapshotPlan::new).collect();

    let (train_ix, val_ix) = split_validation(&edges, levels, config.validation_fraction, config.seed);
    let truths: Vec<usize> = train_ix.iter().map(|&i| edges[i].level).collect();
    let beta = config
        .class_weights
        .clone()
        .unwrap_or_else(|| predictor::class_weights(&truths, levels));

    let mut nodes: Vec<NodeId> = edges.iter().flat_map(|e| [e.source, e.target]).collect();
    nodes.sort_unstable();
    nodes.dedup();
    let mut row_of = vec![usize::MAX; node_count];
    for (r, &v) in nodes.iter().enumerate() {
        row_of[v] = r;
    }
    let train_batch = Batch::new(&edges, &train_ix, &row_of, &beta);
    let val_batch = Batch::new(&edges, &val_ix, &row_of, &beta);

    let mut adam = AdamState::new(config.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xd0_0d);
    let mut history = Vec::new();
    let mut best: Option<(f64, ParameterStore)> = None;
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        let mut session = Session::new();
        let fwd = model.forward(&mut session, &plans, &nodes, Mode::Train(&mut rng), false)?;
        let probs = model.edge_probabilities(
            &mut session,
            fwd.embeddings,
            train_batch.sources.clone(),
            train_batch.targets.clone(),
        )?;
        let loss = model.loss(&mut session, probs, train_batch.truths.clone(), &train_batch.weights, config.l2)?;
        let train_loss = session.tape.value(loss).item()?;
        if !train_loss.is_finite() {
            return Err(Error::Numeric {
                epoch,
                message: format!("training loss is {train_loss}"),
            });
        }
        session.tape.backward(loss)?;
        model.store.accumulate_grads(&session.tape);
        adam.step(&mut model.store)?;
        if model.store.iter().any(|(_, t)| !t.is_finite()) {
            return Err(Error::Numeric {
                epoch,
                message: "parameters became non-finite".into(),
            });
        }

        let mut record = EpochRecord {
            epoch,
            train_loss,
            validation_loss: None,
            event: None,
        };
        if !val_ix.is_empty() {
            let v = validation_loss(&model, &plans, &nodes, &val_batch)?;
            record.validation_loss = Some(v);
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, model.store.clone()));
                stale = 0;
                record.event = Some("best".into());
            } else {
                stale += 1;
                if stale >= config.patience {
                    record.event = Some("early-stop".into());
                }
            }
        }
        debug!(
            "epoch {epoch}: train loss {train_loss:.6}, validation loss {:?}",
            record.validation_loss
        );
        let stop = record.event.as_deref() == Some("early-stop");
        history.push(record);
        if stop {
            info!("early stop after epoch {epoch}");
            break;
        }
    }
    if let Some((_, store)) = best {
        model.store = store;
    }
    let steps = adam.step_count();
    finish(model, plans, config.clone(), history, steps)
}

fn validation_loss(model: &TrustGuard, plans: &[SnapshotPlan], nodes: &[NodeId], batch: &Batch) -> Result<f64> {
    let mut session = Session::new();
    let fwd = model.forward(&mut session, plans, nodes, Mode::Eval, false)?;
    let probs = model.edge_probabilities(&mut session, fwd.embeddings, batch.sources.clone(), batch.targets.clone())?;
    let p = session.tape.value(probs);
    let levels = p.cols();
    let mut loss = 0.0;
    for (e, (&t, &w)) in batch.truths.iter().zip(&batch.weights).enumerate() {
        loss -= w * p.values()[e * levels + t].max(LOG_FLOOR).ln();
    }
    Ok(loss)
}

fn finish(
    model: TrustGuard,
    plans: Vec<SnapshotPlan>,
    config: TrainConfig,
    history: Vec<EpochRecord>,
    steps: u64,
) -> Result<TrainedModel> {
    let all: Vec<NodeId> = (0..model.node_count()).collect();
    let mut session = Session::new();
    let fwd = model.forward(&mut session, &plans, &all, Mode::Eval, true)?;
    let embeddings = session.tape.value(fwd.embeddings).clone();
    Ok(TrainedModel {
        config,
        model,
        embeddings,
        coefficients: fwd.coefficients,
        attention: fwd.attention,
        history,
        steps,
    })
}

impl TrainedModel {
    pub fn node_count(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn embedding(&self, node: NodeId) -> &[f64] {
        self.embeddings.row(node)
    }

    /// Predicts the trust level of each directed pair `(trustor, trustee)`.
    pub fn predict(&self, pairs: &[(NodeId, NodeId)]) -> Result<Vec<PredictionResult>> {
        let n = self.node_count();
        pairs
            .iter()
            .map(|&(u, v)| {
                if u >= n || v >= n {
                    return Err(Error::config(format!("pair ({u}, {v}) outside {n} nodes")));
                }
                Ok(predictor::predict_edge(self.embedding(u), self.embedding(v), &self.model.store)?)
            })
            .collect()
    }

    /// Binary checkpoint: parameters plus the configuration needed to
    /// rebuild the model.
    pub fn write_checkpoint<W: Write>(&self, out: W) -> Result<()> {
        let meta = CheckpointMeta {
            config: self.config.clone(),
            node_count: self.model.node_count(),
            sequence_len: self.model.sequence_len(),
        };
        let meta = serde_json::to_string(&meta).map_err(|e| Error::config(e.to_string()))?;
        self.model.store.write_checkpoint(out, self.steps, &meta)?;
        Ok(())
    }

    /// Restores a checkpoint and recomputes embeddings over `snapshots`,
    /// which must be the training sequence.
    pub fn read_checkpoint<R: Read>(input: R, snapshots: &[Snapshot]) -> Result<Self> {
        let (store, steps, meta) = ParameterStore::read_checkpoint(input)?;
        let meta: CheckpointMeta = serde_json::from_str(&meta).map_err(|e| Error::config(e.to_string()))?;
        let model = TrustGuard::from_store(meta.config.model.clone(), store, meta.node_count, meta.sequence_len)?;
        let plans: Vec<SnapshotPlan> = snapshots.iter().map(SnapshotPlan::new).collect();
        finish(model, plans, meta.config, Vec::new(), steps)
    }

    /// Writes the epoch log as JSON lines.
    pub fn write_history<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.history {
            serde_json::to_writer(&mut out, r).map_err(|e| Error::config(e.to_string()))?;
            writeln!(out)?;
        }
        Ok(())
    }
}
