//! The full network as one differentiable computation over a snapshot
//! sequence: batched spatial layers, temporal fusion and the edge head.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParameterStore, Segments, Tape, Tensor, TensorError, Var};
use crate::error::{Error, Result};
use crate::graph::{NodeId, Snapshot};
use crate::predictor::{self, LOG_FLOOR};
use crate::spatial::{self, CoefficientRecord, Role, RoleMode, SpatialConfig};
use crate::temporal::{self, AttentionRecord, TemporalConfig, TemporalMode};

/// Learnable initial node embeddings, present only when
/// [`ModelConfig::learn_initial`] is set.
pub const INITIAL_PARAM: &str = "embedding.initial";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Width of the initial node embeddings.
    pub initial_dim: usize,
    /// Number of trust levels.
    pub levels: usize,
    pub spatial: SpatialConfig,
    pub temporal: TemporalConfig,
    /// Optional ReLU hidden layer in the edge head.
    pub predictor_hidden: Option<usize>,
    /// Train the initial embeddings instead of keeping them fixed.
    pub learn_initial: bool,
    /// The snapshot sequence is a single cumulative graph.
    pub static_graph: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            initial_dim: 64,
            levels: 2,
            spatial: SpatialConfig::default(),
            temporal: TemporalConfig::default(),
            predictor_hidden: None,
            learn_initial: false,
            static_graph: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.initial_dim == 0 {
            return Err(Error::config("initial embedding dimension must be positive"));
        }
        if self.levels < 2 {
            return Err(Error::config("at least two trust levels are required"));
        }
        if self.predictor_hidden == Some(0) {
            return Err(Error::config("hidden layer width must be positive"));
        }
        self.spatial.validate()?;
        self.temporal.validate(self.spatial.output_dim())
    }

    pub fn output_dim(&self) -> usize {
        self.spatial.output_dim()
    }
}

/// Model variants compared in ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    Full,
    /// Out-neighbours only.
    TrustorGuard,
    /// In-neighbours only.
    TrusteeGuard,
    /// Equal-weight temporal fusion.
    GuardMean,
    /// Exponential-decay temporal fusion.
    GuardDecay,
    /// One cumulative snapshot, no defense, mean fusion.
    StaticMean,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::TrustorGuard,
        Variant::TrusteeGuard,
        Variant::GuardMean,
        Variant::GuardDecay,
        Variant::StaticMean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "Full",
            Variant::TrustorGuard => "TrustorGuard",
            Variant::TrusteeGuard => "TrusteeGuard",
            Variant::GuardMean => "GuardMean",
            Variant::GuardDecay => "GuardDecay",
            Variant::StaticMean => "StaticMean",
        }
    }

    /// Adjusts `config` so it describes this variant.
    pub fn apply(self, config: &mut ModelConfig) {
        match self {
            Variant::Full => {}
            Variant::TrustorGuard => config.spatial.roles = RoleMode::TrustorOnly,
            Variant::TrusteeGuard => config.spatial.roles = RoleMode::TrusteeOnly,
            Variant::GuardMean => config.temporal.mode = TemporalMode::Mean,
            Variant::GuardDecay => config.temporal.mode = TemporalMode::Decay,
            Variant::StaticMean => {
                config.spatial.defense_enabled = false;
                config.temporal.mode = TemporalMode::Mean;
                config.static_graph = true;
            }
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase().replace(['-', '_'], "");
        Variant::ALL
            .into_iter()
            .find(|v| v.name().to_ascii_lowercase() == lower)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                format!("unknown variant `{s}` (expected one of {})", names.join(", "))
            })
    }
}

/// Initial embeddings drawn uniformly from `[-1, 1]`, row by row, so that
/// appending nodes never changes the rows of existing ones.
pub fn initial_embeddings(node_count: usize, dim: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_1a17_1a15);
    let values = (0..node_count * dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
    Tensor::matrix(node_count, dim, values).expect("sized")
}

/// Index structures for one snapshot, built once and reused every epoch.
#[derive(Clone, Debug)]
pub struct SnapshotPlan {
    pub index: usize,
    nodes: Arc<[usize]>,
    roles: [RolePlan; 2],
}

#[derive(Clone, Debug)]
struct RolePlan {
    role: Role,
    /// Local row of the aggregating node, per edge.
    centers: Arc<[usize]>,
    /// Local row of the neighbour, per edge.
    neighbors: Arc<[usize]>,
    levels: Arc<[usize]>,
    segments: Arc<Segments>,
    uniform: Arc<[f64]>,
    /// (source, target) of each edge.
    endpoints: Vec<(NodeId, NodeId)>,
}

impl SnapshotPlan {
    pub fn new(snapshot: &Snapshot) -> Self {
        let nodes: Vec<usize> = snapshot.nodes().to_vec();
        let local = |v: NodeId| nodes.binary_search(&v).expect("endpoint is a snapshot node");
        let roles = [Role::Trustee, Role::Trustor].map(|role| {
            let mut centers = Vec::new();
            let mut neighbors = Vec::new();
            let mut levels = Vec::new();
            let mut endpoints = Vec::new();
            for e in snapshot.edges().iter().filter(|e| !e.is_self_loop()) {
                let (c, n) = match role {
                    Role::Trustee => (e.target, e.source),
                    Role::Trustor => (e.source, e.target),
                };
                centers.push(local(c));
                neighbors.push(local(n));
                levels.push(e.level);
                endpoints.push((e.source, e.target));
            }
            let segments = Segments::new(centers.clone(), nodes.len()).expect("local rows in range");
            let sizes = segments.sizes();
            let uniform = centers.iter().map(|&c| 1.0 / sizes[c] as f64).collect();
            RolePlan {
                role,
                centers: centers.into(),
                neighbors: neighbors.into(),
                levels: levels.into(),
                segments: Arc::new(segments),
                uniform,
                endpoints,
            }
        });
        Self {
            index: snapshot.index,
            nodes: nodes.into(),
            roles,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.roles[0].centers.len()
    }
}

/// A tape plus the parameters bound to it so far.
pub struct Session {
    pub tape: Tape,
    bound: BTreeMap<String, Var>,
}

impl Default for Session {
    fn default() -> Self {
        Self::new()
    }
}

impl Session {
    pub fn new() -> Self {
        Self {
            tape: Tape::new(),
            bound: BTreeMap::new(),
        }
    }

    /// The parameter `name` as a variable, bound on first use.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var, TensorError> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let v = self.tape.param(store, name)?;
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }
}

pub enum Mode<'r> {
    /// Dropout active, drawing masks from the generator.
    Train(&'r mut ChaCha8Rng),
    Eval,
}

/// Result of [`TrustGuard::forward`].
pub struct Forward {
    /// Final embeddings of the requested nodes, in request order.
    pub embeddings: Var,
    /// Node id -> row of `embeddings` (`usize::MAX` when not requested).
    pub row_of: Vec<usize>,
    pub coefficients: Vec<CoefficientRecord>,
    pub attention: Vec<AttentionRecord>,
}

impl Forward {
    pub fn rows(&self, nodes: impl IntoIterator<Item = NodeId>) -> Result<Arc<[usize]>, TensorError> {
        nodes
            .into_iter()
            .map(|v| match self.row_of.get(v) {
                Some(&r) if r != usize::MAX => Ok(r),
                _ => Err(TensorError::Index {
                    op: "forward rows",
                    index: v,
                    bound: self.row_of.len(),
                }),
            })
            .collect()
    }
}

/// Parameters and fixed inputs of one model instance.
#[derive(Clone, Debug)]
pub struct TrustGuard {
    pub config: ModelConfig,
    pub store: ParameterStore,
    initial: Tensor,
    sequence_len: usize,
}

impl TrustGuard {
    /// Initializes every parameter from `seed`. `sequence_len` is the number
    /// of snapshots the temporal layer sees.
    pub fn new(config: ModelConfig, node_count: usize, sequence_len: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if sequence_len == 0 {
            return Err(Error::config("the snapshot sequence is empty"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new(seed);
        let levels = config.levels;
        let mut in_dim = config.initial_dim;
        for (li, &dim) in config.spatial.layer_dims.iter().enumerate() {
            let [w_te, w_tr, w_both, b_both] = spatial::param_names(li + 1);
            store.insert_glorot(&w_te, in_dim, levels, &mut rng)?;
            store.insert_glorot(&w_tr, in_dim, levels, &mut rng)?;
            store.insert_glorot(&w_both, dim, 4 * in_dim, &mut rng)?;
            store.insert_zeros(&b_both, vec![dim])?;
            in_dim = dim;
        }
        let out_dim = config.output_dim();
        store.insert_glorot(spatial::CARRY_PARAM, out_dim, config.initial_dim, &mut rng)?;
        if config.temporal.mode == TemporalMode::Attention {
            store.insert_glorot(temporal::POSITION_PARAM, sequence_len, out_dim, &mut rng)?;
            let head_dim = out_dim / config.temporal.heads;
            for s in 1..=config.temporal.heads {
                for name in temporal::head_param_names(s) {
                    store.insert_glorot(&name, head_dim, out_dim, &mut rng)?;
                }
            }
        }
        let mut head_in = 2 * out_dim;
        if let Some(h) = config.predictor_hidden {
            store.insert_glorot(predictor::HIDDEN_WEIGHT_PARAM, h, head_in, &mut rng)?;
            store.insert_zeros(predictor::HIDDEN_BIAS_PARAM, vec![h])?;
            head_in = h;
        }
        store.insert_glorot(predictor::WEIGHT_PARAM, levels, head_in, &mut rng)?;
        store.insert_zeros(predictor::BIAS_PARAM, vec![levels])?;
        let initial = initial_embeddings(node_count, config.initial_dim, seed);
        if config.learn_initial {
            store.insert(INITIAL_PARAM, initial.clone())?;
        }
        Ok(Self {
            config,
            store,
            initial,
            sequence_len,
        })
    }

    /// Rebuilds a model around an existing parameter store.
    pub fn from_store(config: ModelConfig, store: ParameterStore, node_count: usize, sequence_len: usize) -> Result<Self> {
        config.validate()?;
        let initial = match store.get(INITIAL_PARAM) {
            Some(t) => t.clone().with_requires_grad(false),
            None => initial_embeddings(node_count, config.initial_dim, store.rng_seed()),
        };
        Ok(Self {
            config,
            store,
            initial,
            sequence_len,
        })
    }

    pub fn node_count(&self) -> usize {
        self.initial.rows()
    }

    pub fn sequence_len(&self) -> usize {
        self.sequence_len
    }

    /// Current layer-0 embeddings.
    pub fn initial(&self) -> &Tensor {
        self.store.get(INITIAL_PARAM).unwrap_or(&self.initial)
    }

    /// Builds the forward computation over `plans` (one per snapshot, in
    /// time order) and returns final embeddings for `nodes`. With `record`
    /// set, every robust coefficient and attention weight is exported.
    pub fn forward(
        &self,
        session: &mut Session,
        plans: &[SnapshotPlan],
        nodes: &[NodeId],
        mut mode: Mode<'_>,
        record: bool,
    ) -> Result<Forward> {
        if plans.len() != self.sequence_len {
            return Err(Error::config(format!(
                "model expects {} snapshots, got {}",
                self.sequence_len,
                plans.len()
            )));
        }
        let store = &self.store;
        let cfg = &self.config;
        let node_count = self.node_count();
        let h0 = if cfg.learn_initial {
            session.param(store, INITIAL_PARAM)?
        } else {
            session.tape.constant(self.initial.clone())
        };
        let carry_w = session.param(store, spatial::CARRY_PARAM)?;
        let mut full = session.tape.matmul_bt(h0, carry_w)?;
        let mut coefficients = Vec::new();
        let mut sequence = Vec::with_capacity(plans.len());

        // transposed rating matrices, one per (layer, role)
        let mut rating_tables = Vec::new();
        for li in 0..cfg.spatial.layer_dims.len() {
            let [w_te, w_tr, _, _] = spatial::param_names(li + 1);
            let te = session.param(store, &w_te)?;
            let tr = session.param(store, &w_tr)?;
            rating_tables.push([session.tape.transpose(te), session.tape.transpose(tr)]);
        }

        for plan in plans {
            let mut h = session.tape.gather_rows(h0, plan.nodes.clone())?;
            let mut in_dim = cfg.initial_dim;
            for (li, &dim) in cfg.spatial.layer_dims.iter().enumerate() {
                let [_, _, w_both, b_both] = spatial::param_names(li + 1);
                let mut branches = [h, h];
                for (ri, rp) in plan.roles.iter().enumerate() {
                    branches[ri] = if !cfg.spatial.roles.uses(rp.role) || rp.centers.is_empty() {
                        session.tape.constant(Tensor::zeros(vec![plan.node_count(), 2 * in_dim]))
                    } else {
                        let weights = self.coefficients(session, h, rp)?;
                        if record {
                            let vals = session.tape.value(weights).values();
                            coefficients.extend(rp.endpoints.iter().zip(vals).map(|(&(s, t), &c)| {
                                CoefficientRecord {
                                    snapshot: plan.index,
                                    layer: li + 1,
                                    role: rp.role,
                                    source: s,
                                    target: t,
                                    coefficient: c,
                                }
                            }));
                        }
                        let nbrs = session.tape.gather_rows(h, rp.neighbors.clone())?;
                        let omega = session.tape.gather_rows(rating_tables[li][ri], rp.levels.clone())?;
                        let mut msg = session.tape.concat_cols(&[nbrs, omega])?;
                        if let Mode::Train(rng) = &mut mode {
                            msg = session.tape.dropout(msg, cfg.spatial.structural_dropout, &mut **rng)?;
                        }
                        session.tape.segment_weighted_sum(msg, weights, rp.segments.clone())?
                    };
                }
                let both = session.tape.concat_cols(&branches)?;
                let w = session.param(store, &w_both)?;
                let b = session.param(store, &b_both)?;
                let z = session.tape.matmul_bt(both, w)?;
                let z = session.tape.add_row(z, b)?;
                h = session.tape.relu(z);
                in_dim = dim;
            }
            full = session.tape.overwrite_rows(full, h, plan.nodes.clone())?;
            sequence.push(full);
        }

        let mut row_of = vec![usize::MAX; node_count];
        for (r, &v) in nodes.iter().enumerate() {
            if v >= node_count {
                return Err(TensorError::Index {
                    op: "forward",
                    index: v,
                    bound: node_count,
                }
                .into());
            }
            row_of[v] = r;
        }
        let rows: Arc<[usize]> = nodes.into();
        let xs = sequence
            .iter()
            .map(|&s| session.tape.gather_rows(s, rows.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let mut attention = Vec::new();
        let embeddings = match cfg.temporal.mode {
            TemporalMode::Mean => {
                let w = vec![1.0 / xs.len() as f64; xs.len()];
                weighted_total(&mut session.tape, &xs, &w)?
            }
            TemporalMode::Decay => {
                let w = temporal::decay_weights(xs.len(), cfg.temporal.decay_tau)?;
                weighted_total(&mut session.tape, &xs, &w)?
            }
            TemporalMode::Attention => {
                self.attend(session, &xs, nodes, &mut mode, record.then_some(&mut attention))?
            }
        };
        Ok(Forward {
            embeddings,
            row_of,
            coefficients,
            attention,
        })
    }

    /// Robust (or uniform) aggregation weights for every edge of a role, as
    /// an `edges x 1` column.
    fn coefficients(&self, session: &mut Session, h: Var, rp: &RolePlan) -> Result<Var, TensorError> {
        let tape = &mut session.tape;
        if !self.config.spatial.defense_enabled {
            return Ok(tape.constant(Tensor::matrix(rp.uniform.len(), 1, rp.uniform.to_vec())?));
        }
        let centers = tape.gather_rows(h, rp.centers.clone())?;
        let nbrs = tape.gather_rows(h, rp.neighbors.clone())?;
        let sim = tape.row_cosine(centers, nbrs)?;
        let sim = tape.relu(sim);
        let normalized = tape.segment_normalize(sim, rp.segments.clone())?;
        let thr = self.config.spatial.prune_threshold;
        let vals = tape.value(normalized).values();
        let mut survivors = vec![false; rp.segments.count()];
        for (&s, &r) in rp.segments.of().iter().zip(vals) {
            survivors[s] |= r >= thr;
        }
        let mask: Arc<[f64]> = rp
            .segments
            .of()
            .iter()
            .zip(vals)
            .map(|(&s, &r)| if r >= thr || !survivors[s] { 1.0 } else { 0.0 })
            .collect();
        let pruned = tape.const_mul(normalized, mask)?;
        tape.segment_normalize(pruned, rp.segments.clone())
    }

    fn attend(
        &self,
        session: &mut Session,
        xs: &[Var],
        nodes: &[NodeId],
        mode: &mut Mode<'_>,
        mut record: Option<&mut Vec<AttentionRecord>>,
    ) -> Result<Var> {
        let cfg = &self.config.temporal;
        let pos = session.param(&self.store, temporal::POSITION_PARAM)?;
        let mut encoded = Vec::with_capacity(xs.len());
        for (i, &x) in xs.iter().enumerate() {
            let p = session.tape.gather_rows(pos, Arc::from([i]))?;
            encoded.push(session.tape.add_row(x, p)?);
        }
        let last = *encoded.last().expect("nonempty sequence");
        let head_dim = self.config.output_dim() / cfg.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outputs = Vec::with_capacity(cfg.heads);
        for s in 1..=cfg.heads {
            let [wq, wk, wv] = temporal::head_param_names(s);
            let wq = session.param(&self.store, &wq)?;
            let wk = session.param(&self.store, &wk)?;
            let wv = session.param(&self.store, &wv)?;
            let tape = &mut session.tape;
            let q = tape.matmul_bt(last, wq)?;
            let mut logits = Vec::with_capacity(encoded.len());
            let mut values = Vec::with_capacity(encoded.len());
            for &x in &encoded {
                let k = tape.matmul_bt(x, wk)?;
                let dot = tape.row_dot(q, k)?;
                logits.push(tape.scale(dot, scale));
                values.push(tape.matmul_bt(x, wv)?);
            }
            let logits = tape.concat_cols(&logits)?;
            let alpha = tape.softmax_rows(logits);
            if let Some(rec) = record.as_deref_mut() {
                let a = tape.value(alpha);
                let n = encoded.len();
                for (r, &node) in nodes.iter().enumerate() {
                    for i in 0..n {
                        rec.push(AttentionRecord {
                            node,
                            head: s,
                            timeslot: i,
                            score: a.values()[r * n + i],
                        });
                    }
                }
            }
            let mut out = None;
            for (i, &v) in values.iter().enumerate() {
                let a_i = tape.slice_cols(alpha, i, i + 1)?;
                let term = tape.mul_col(v, a_i)?;
                out = Some(match out {
                    None => term,
                    Some(acc) => tape.add(acc, term)?,
                });
            }
            let mut out = out.expect("nonempty sequence");
            if let Mode::Train(rng) = mode {
                out = tape.dropout(out, cfg.dropout, &mut **rng)?;
            }
            outputs.push(out);
        }
        Ok(session.tape.concat_cols(&outputs)?)
    }

    /// Trust-level probabilities (`pairs x levels`) for directed pairs given
    /// as embedding rows.
    pub fn edge_probabilities(
        &self,
        session: &mut Session,
        embeddings: Var,
        sources: Arc<[usize]>,
        targets: Arc<[usize]>,
    ) -> Result<Var, TensorError> {
        let eu = session.tape.gather_rows(embeddings, sources)?;
        let ev = session.tape.gather_rows(embeddings, targets)?;
        let mut x = session.tape.concat_cols(&[eu, ev])?;
        if self.config.predictor_hidden.is_some() {
            let w = session.param(&self.store, predictor::HIDDEN_WEIGHT_PARAM)?;
            let b = session.param(&self.store, predictor::HIDDEN_BIAS_PARAM)?;
            let z = session.tape.matmul_bt(x, w)?;
            let z = session.tape.add_row(z, b)?;
            x = session.tape.relu(z);
        }
        let w = session.param(&self.store, predictor::WEIGHT_PARAM)?;
        let b = session.param(&self.store, predictor::BIAS_PARAM)?;
        let z = session.tape.matmul_bt(x, w)?;
        let z = session.tape.add_row(z, b)?;
        Ok(session.tape.softmax_rows(z))
    }

    /// Weighted cross-entropy of `probabilities` against `truths`, where
    /// `edge_weights[e]` is the class weight of edge `e`, plus
    /// `l2 * sum of squared parameters`.
    pub fn loss(
        &self,
        session: &mut Session,
        probabilities: Var,
        truths: Arc<[usize]>,
        edge_weights: &[f64],
        l2: f64,
    ) -> Result<Var, TensorError> {
        let picked = session.tape.pick_cols(probabilities, truths)?;
        let logs = session.tape.ln_clamped(picked, LOG_FLOOR);
        let neg: Arc<[f64]> = edge_weights.iter().map(|w| -w).collect();
        let mut total = session.tape.weighted_sum(logs, neg)?;
        if l2 > 0.0 {
            let names: Vec<String> = self.store.names().map(str::to_string).collect();
            for name in names {
                let p = session.param(&self.store, &name)?;
                let sq = session.tape.sum_squares(p);
                let sq = session.tape.scale(sq, l2);
                total = session.tape.add(total, sq)?;
            }
        }
        Ok(total)
    }
}

fn weighted_total(tape: &mut Tape, xs: &[Var], weights: &[f64]) -> Result<Var, TensorError> {
    let mut acc = tape.scale(xs[0], weights[0]);
    for (&x, &w) in xs.iter().zip(weights).skip(1) {
        let term = tape.scale(x, w);
        acc = tape.add(acc, term)?;
    }
    Ok(acc)
}
