//! Per-snapshot trust propagation: rating embeddings, messages, robust
//! coefficients and role fusion.
//!
//! The functions here work on one node at a time and double as a reference
//! for the batched forward pass in [`crate::model`].

use serde::{Deserialize, Serialize};

use crate::autodiff::{cosine, ParameterStore, Tensor, TensorError};
use crate::error::{Error, Result};
use crate::graph::{NodeId, Snapshot};

/// Which side of an edge a node is aggregating as.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Receives ratings; neighbours are the sources of in-edges.
    Trustee,
    /// Issues ratings; neighbours are the targets of out-edges.
    Trustor,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Trustee => "trustee",
            Role::Trustor => "trustor",
        }
    }
}

/// Which role branches feed the fusion step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoleMode {
    #[default]
    Both,
    /// Only out-neighbours; the trustee branch is zeroed.
    TrustorOnly,
    /// Only in-neighbours; the trustor branch is zeroed.
    TrusteeOnly,
}

impl RoleMode {
    pub fn uses(self, role: Role) -> bool {
        !matches!(
            (self, role),
            (RoleMode::TrustorOnly, Role::Trustee) | (RoleMode::TrusteeOnly, Role::Trustor)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialConfig {
    /// Output dimension of each propagation layer.
    pub layer_dims: Vec<usize>,
    pub prune_threshold: f64,
    pub defense_enabled: bool,
    pub structural_dropout: f64,
    pub roles: RoleMode,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        Self {
            layer_dims: layer_dims(3),
            prune_threshold: 0.5,
            defense_enabled: true,
            structural_dropout: 0.0,
            roles: RoleMode::Both,
        }
    }
}

impl SpatialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.is_empty() {
            return Err(Error::config("at least one propagation layer is required"));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::config("layer dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&self.prune_threshold) {
            return Err(Error::config(format!(
                "prune threshold {} outside [0, 1)",
                self.prune_threshold
            )));
        }
        if !(0.0..1.0).contains(&self.structural_dropout) {
            return Err(Error::config("structural dropout must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated")
    }
}

/// Layer output dimensions for `layers` propagation layers: 32 at both ends
/// and 64 in between (a single layer gets 32).
pub fn layer_dims(layers: usize) -> Vec<usize> {
    match layers {
        0 => Vec::new(),
        1 => vec![32],
        n => {
            let mut dims = vec![32];
            dims.extend(std::iter::repeat_n(64, n - 2));
            dims.push(32);
            dims
        }
    }
}

/// Names of the parameters of propagation layer `layer` (1-based).
pub fn param_names(layer: usize) -> [String; 4] {
    [
        format!("spatial.l{layer}.w_te"),
        format!("spatial.l{layer}.w_tr"),
        format!("spatial.l{layer}.w_both"),
        format!("spatial.l{layer}.b_both"),
    ]
}

/// Shared projection from the initial dimension to the output dimension,
/// applied to nodes that have not yet appeared in any snapshot.
pub const CARRY_PARAM: &str = "spatial.carry";

/// Column `level` of the role's rating matrix (`dim x levels`).
pub fn embed_rating(w_role: &Tensor, level: usize) -> Result<Vec<f64>, TensorError> {
    let (rows, cols) = w_role.dims();
    if level >= cols {
        return Err(TensorError::Index {
            op: "embed_rating",
            index: level,
            bound: cols,
        });
    }
    Ok((0..rows).map(|r| w_role.get(r, level)).collect())
}

/// Concatenation of the neighbour embedding and the rating embedding.
pub fn build_message(h_neighbor: &[f64], omega: &[f64]) -> Result<Vec<f64>, TensorError> {
    if h_neighbor.len() != omega.len() {
        return Err(TensorError::Shape {
            op: "build_message",
            left: vec![h_neighbor.len()],
            right: vec![omega.len()],
        });
    }
    let mut msg = Vec::with_capacity(2 * h_neighbor.len());
    msg.extend_from_slice(h_neighbor);
    msg.extend_from_slice(omega);
    Ok(msg)
}

/// Cosine similarities clamped to `[0, 1]`, normalized to sum to one. When
/// every similarity is zero the weights are uniform.
pub fn normalized_similarities(center: &[f64], neighbors: &[&[f64]]) -> Vec<f64> {
    let sims: Vec<f64> = neighbors.iter().map(|n| cosine(center, n).clamp(0.0, 1.0)).collect();
    let total: f64 = sims.iter().sum();
    if total > 0.0 {
        sims.iter().map(|s| s / total).collect()
    } else {
        vec![1.0 / sims.len() as f64; sims.len()]
    }
}

/// Zeroes weights below `threshold` and renormalizes the survivors. If
/// nothing survives the input weights are returned unchanged.
pub fn prune_and_renormalize(normalized: &[f64], threshold: f64) -> Vec<f64> {
    let kept: f64 = normalized.iter().filter(|&&r| r >= threshold).sum();
    if kept <= 0.0 {
        return normalized.to_vec();
    }
    normalized
        .iter()
        .map(|&r| if r >= threshold { r / kept } else { 0.0 })
        .collect()
}

/// Robust aggregation weights for one node's neighbours in one role. With
/// the defense disabled every neighbour gets `1 / |N|`.
pub fn robust_coefficients(center: &[f64], neighbors: &[&[f64]], threshold: f64, defense: bool) -> Vec<f64> {
    if neighbors.is_empty() {
        return Vec::new();
    }
    if !defense {
        return vec![1.0 / neighbors.len() as f64; neighbors.len()];
    }
    prune_and_renormalize(&normalized_similarities(center, neighbors), threshold)
}

/// `sum_e coefficients[e] * messages[e]`; an empty neighbourhood yields the
/// zero vector of length `dim`.
pub fn aggregate_role(messages: &[Vec<f64>], coefficients: &[f64], dim: usize) -> Result<Vec<f64>, TensorError> {
    if messages.len() != coefficients.len() {
        return Err(TensorError::Alignment {
            op: "aggregate_role",
            messages: messages.len(),
            weights: coefficients.len(),
            segments: messages.len(),
        });
    }
    let mut out = vec![0.0; dim];
    for (msg, &r) in messages.iter().zip(coefficients) {
        if msg.len() != dim {
            return Err(TensorError::Shape {
                op: "aggregate_role",
                left: vec![dim],
                right: vec![msg.len()],
            });
        }
        for (o, m) in out.iter_mut().zip(msg) {
            *o += r * m;
        }
    }
    Ok(out)
}

/// `relu(W_both [h_te ; h_tr] + b_both)` with `W_both` stored `out x in`.
pub fn fuse_roles(w_both: &Tensor, b_both: &[f64], h_te: &[f64], h_tr: &[f64]) -> Result<Vec<f64>, TensorError> {
    let (rows, cols) = w_both.dims();
    if h_te.len() != h_tr.len() || h_te.len() + h_tr.len() != cols || b_both.len() != rows {
        return Err(TensorError::Shape {
            op: "fuse_roles",
            left: vec![rows, cols],
            right: vec![h_te.len() + h_tr.len(), b_both.len()],
        });
    }
    let input: Vec<f64> = h_te.iter().chain(h_tr).copied().collect();
    Ok((0..rows)
        .map(|r| {
            let z: f64 = w_both.row(r).iter().zip(&input).map(|(w, x)| w * x).sum::<f64>() + b_both[r];
            z.max(0.0)
        })
        .collect())
}

/// One aggregation weight, for export.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRecord {
    pub snapshot: usize,
    /// 1-based propagation layer.
    pub layer: usize,
    pub role: Role,
    /// Rating issuer.
    pub source: NodeId,
    /// Rating receiver.
    pub target: NodeId,
    pub coefficient: f64,
}

fn param<'a>(store: &'a ParameterStore, name: &str) -> Result<&'a Tensor, TensorError> {
    store.get(name).ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
}

/// Node-by-node spatial forward over one snapshot, without structural
/// dropout. `initial` holds the layer-0 embeddings of every node; rows of
/// nodes without edges in the snapshot are copied from `carried`.
pub fn spatial_forward(
    snapshot: &Snapshot,
    initial: &Tensor,
    carried: &Tensor,
    config: &SpatialConfig,
    store: &ParameterStore,
) -> Result<(Tensor, Vec<CoefficientRecord>)> {
    config.validate()?;
    let node_count = initial.rows();
    let out_dim = config.output_dim();
    if carried.dims() != (node_count, out_dim) {
        return Err(TensorError::Shape {
            op: "spatial_forward",
            left: vec![node_count, out_dim],
            right: carried.shape().to_vec(),
        }
        .into());
    }
    let mut records = Vec::new();
    let mut prev: Vec<Vec<f64>> = initial.to_rows();
    for (li, &dim) in config.layer_dims.iter().enumerate() {
        let layer = li + 1;
        let [w_te, w_tr, w_both, b_both] = param_names(layer);
        let (w_te, w_tr) = (param(store, &w_te)?, param(store, &w_tr)?);
        let (w_both, b_both) = (param(store, &w_both)?, param(store, &b_both)?);
        let in_dim = prev.first().map_or(0, Vec::len);
        let mut next = vec![vec![0.0; dim]; node_count];
        for &u in snapshot.nodes() {
            let mut branches = Vec::with_capacity(2);
            for role in [Role::Trustee, Role::Trustor] {
                let (edge_ix, w_role) = match role {
                    Role::Trustee => (snapshot.in_edges(u), w_te),
                    Role::Trustor => (snapshot.out_edges(u), w_tr),
                };
                if !config.roles.uses(role) {
                    branches.push(vec![0.0; 2 * in_dim]);
                    continue;
                }
                let edges: Vec<_> = edge_ix.iter().map(|&i| snapshot.edges()[i]).collect();
                let neighbor = |e: &crate::graph::TrustEdge| match role {
                    Role::Trustee => e.source,
                    Role::Trustor => e.target,
                };
                let nbrs: Vec<&[f64]> = edges.iter().map(|e| prev[neighbor(e)].as_slice()).collect();
                let coeffs = robust_coefficients(&prev[u], &nbrs, config.prune_threshold, config.defense_enabled);
                let mut msgs = Vec::with_capacity(edges.len());
                for e in &edges {
                    let omega = embed_rating(w_role, e.level)?;
                    msgs.push(build_message(&prev[neighbor(e)], &omega)?);
                }
                for (e, &c) in edges.iter().zip(&coeffs) {
                    records.push(CoefficientRecord {
                        snapshot: snapshot.index,
                        layer,
                        role,
                        source: e.source,
                        target: e.target,
                        coefficient: c,
                    });
                }
                branches.push(aggregate_role(&msgs, &coeffs, 2 * in_dim)?);
            }
            next[u] = fuse_roles(w_both, b_both.values(), &branches[0], &branches[1])?;
        }
        prev = next;
    }
    let mut out = carried.clone();
    for &u in snapshot.nodes() {
        out.values_mut()[u * out_dim..(u + 1) * out_dim].copy_from_slice(&prev[u]);
    }
    Ok((out.with_requires_grad(false), records))
}
