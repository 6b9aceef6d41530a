//! Dynamic trust graphs: rating events, snapshots, node labels.

mod label;
mod load;
mod segment;

pub use label::{edge_homophily_ratio, label_nodes, Label, NodeLabel};
pub use load::{load_edge_list, parse_edge_list, write_edge_list, LoadOptions};
pub use segment::{
    segment, segment_event_driven, segment_time_driven, write_snapshot_manifest, Segmentation,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense node identifier in `[0, node_count)`.
pub type NodeId = usize;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: rating {rating} has no trust level in this scheme")]
    Mapping { line: usize, rating: f64 },
    #[error("line {line}: self-loop {node} -> {node} rejected")]
    SelfLoop { line: usize, node: i64 },
    #[error("trust level {level} out of range for {cardinality} levels")]
    Level { level: usize, cardinality: usize },
    #[error("{0}")]
    Config(String),
    #[error("graph has no edges")]
    Empty,
    #[error("scheme `{0}` does not designate positive and negative levels")]
    UnsupportedLabeling(String),
    #[error("node {0} has no label")]
    MissingLabel(NodeId),
    #[error("homophily ratio undefined on an empty edge set")]
    UndefinedRatio,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

/// How raw numeric ratings map onto level indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RatingMap {
    /// Ratings in `[-magnitude, -1]` map to level 0, `[1, magnitude]` to level 1.
    Signed { magnitude: f64 },
    /// Level `i` is the rating `values[i]` (matched within 1e-9).
    Exact { values: Vec<f64> },
}

/// The ordered set of trust levels, from least to most trusting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrustLevelScheme {
    pub name: String,
    pub level_names: Vec<String>,
    pub rating_map: RatingMap,
    pub polarity: Option<Vec<Polarity>>,
}

impl TrustLevelScheme {
    /// Bitcoin-OTC / Bitcoin-Alpha: ratings in `[-10, 10] \ {0}`, magnitudes
    /// discarded.
    pub fn bitcoin() -> Self {
        Self {
            name: "bitcoin".into(),
            level_names: vec!["distrust".into(), "trust".into()],
            rating_map: RatingMap::Signed { magnitude: 10.0 },
            polarity: Some(vec![Polarity::Negative, Polarity::Positive]),
        }
    }

    /// Advogato-style four-level certification.
    pub fn advogato() -> Self {
        Self {
            name: "advogato".into(),
            level_names: vec![
                "observer".into(),
                "apprentice".into(),
                "journeyer".into(),
                "master".into(),
            ],
            rating_map: RatingMap::Exact {
                values: vec![0.4, 0.6, 0.8, 1.0],
            },
            polarity: None,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "bitcoin" | "binary" => Some(Self::bitcoin()),
            "advogato" | "four-level" => Some(Self::advogato()),
            _ => None,
        }
    }

    pub fn cardinality(&self) -> usize {
        self.level_names.len()
    }

    pub fn map_rating(&self, rating: f64) -> Option<usize> {
        match &self.rating_map {
            RatingMap::Signed { magnitude } => {
                if (1.0..=*magnitude).contains(&rating) {
                    Some(1)
                } else if (-*magnitude..=-1.0).contains(&rating) {
                    Some(0)
                } else {
                    None
                }
            }
            RatingMap::Exact { values } => values.iter().position(|v| (v - rating).abs() < 1e-9),
        }
    }

    /// A representative raw rating for `level`, used when writing edge lists.
    pub fn rating_for(&self, level: usize) -> f64 {
        match &self.rating_map {
            RatingMap::Signed { .. } => {
                if level == 0 {
                    -1.0
                } else {
                    1.0
                }
            }
            RatingMap::Exact { values } => values[level],
        }
    }

    pub fn polarity(&self, level: usize) -> Option<Polarity> {
        self.polarity.as_ref().and_then(|p| p.get(level).copied())
    }

    /// Level with the most trust.
    pub fn top_level(&self) -> usize {
        self.cardinality() - 1
    }

    /// Level with the least trust.
    pub fn bottom_level(&self) -> usize {
        0
    }
}

/// One directed rating event `source` (trustor) -> `target` (trustee).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrustEdge {
    pub source: NodeId,
    pub target: NodeId,
    pub level: usize,
    pub timestamp: f64,
}

impl TrustEdge {
    pub fn new(source: NodeId, target: NodeId, level: usize, timestamp: f64) -> Self {
        Self {
            source,
            target,
            level,
            timestamp,
        }
    }

    pub fn is_self_loop(&self) -> bool {
        self.source == self.target
    }

    /// Key that identifies an event exactly (timestamps compared bitwise).
    pub fn key(&self) -> (NodeId, NodeId, usize, u64) {
        (self.source, self.target, self.level, self.timestamp.to_bits())
    }
}

/// Time-ordered rating events over a dense node range.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicGraph {
    scheme: TrustLevelScheme,
    edges: Vec<TrustEdge>,
    node_count: usize,
    raw_ids: Vec<i64>,
}

impl DynamicGraph {
    /// Validates levels and node ids, then sorts edges by timestamp (stable).
    pub fn new(scheme: TrustLevelScheme, mut edges: Vec<TrustEdge>, node_count: usize) -> Result<Self, GraphError> {
        for e in &edges {
            if e.level >= scheme.cardinality() {
                return Err(GraphError::Level {
                    level: e.level,
                    cardinality: scheme.cardinality(),
                });
            }
            if e.source >= node_count || e.target >= node_count {
                return Err(GraphError::Config(format!(
                    "edge {} -> {} outside node range {node_count}",
                    e.source, e.target
                )));
            }
            if !e.timestamp.is_finite() {
                return Err(GraphError::Config("non-finite timestamp".into()));
            }
        }
        edges.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        Ok(Self {
            scheme,
            edges,
            node_count,
            raw_ids: (0..node_count as i64).collect(),
        })
    }

    pub(crate) fn with_raw_ids(mut self, raw_ids: Vec<i64>) -> Self {
        debug_assert_eq!(raw_ids.len(), self.node_count);
        self.raw_ids = raw_ids;
        self
    }

    pub fn scheme(&self) -> &TrustLevelScheme {
        &self.scheme
    }

    pub fn edges(&self) -> &[TrustEdge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Identifier the node carried in the source file.
    pub fn raw_id(&self, node: NodeId) -> i64 {
        self.raw_ids[node]
    }

    /// Dense id of a raw id from the source file.
    pub fn node_of(&self, raw: i64) -> Option<NodeId> {
        self.raw_ids.iter().position(|&r| r == raw)
    }

    pub fn time_span(&self) -> Option<(f64, f64)> {
        Some((self.edges.first()?.timestamp, self.edges.last()?.timestamp))
    }

    /// Edge count per level.
    pub fn level_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.scheme.cardinality()];
        for e in &self.edges {
            counts[e.level] += 1;
        }
        counts
    }
}

/// All edges inside one time window, with both adjacency directions.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub index: usize,
    pub window: (f64, f64),
    edges: Vec<TrustEdge>,
    nodes: Vec<NodeId>,
    /// node -> indices of edges whose target is the node
    incoming: BTreeMap<NodeId, Vec<usize>>,
    /// node -> indices of edges whose source is the node
    outgoing: BTreeMap<NodeId, Vec<usize>>,
}

impl Snapshot {
    pub fn new(index: usize, window: (f64, f64), edges: Vec<TrustEdge>) -> Self {
        let mut incoming: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
        let mut outgoing: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
        let mut nodes = Vec::with_capacity(edges.len() * 2);
        for (i, e) in edges.iter().enumerate() {
            nodes.push(e.source);
            nodes.push(e.target);
            if e.is_self_loop() {
                continue;
            }
            incoming.entry(e.target).or_default().push(i);
            outgoing.entry(e.source).or_default().push(i);
        }
        nodes.sort_unstable();
        nodes.dedup();
        Self {
            index,
            window,
            edges,
            nodes,
            incoming,
            outgoing,
        }
    }

    pub fn edges(&self) -> &[TrustEdge] {
        &self.edges
    }

    /// Sorted, distinct endpoints of the snapshot's edges.
    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn contains_node(&self, node: NodeId) -> bool {
        self.nodes.binary_search(&node).is_ok()
    }

    /// `(trustor-role neighbours, trustee-role neighbours)` of `node`: the
    /// targets of its out-edges and the sources of its in-edges. Parallel
    /// edges appear once per edge; self-loops are excluded.
    pub fn neighbor_sets(&self, node: NodeId) -> (Vec<NodeId>, Vec<NodeId>) {
        let trustor = self
            .outgoing
            .get(&node)
            .map(|ix| ix.iter().map(|&i| self.edges[i].target).collect())
            .unwrap_or_default();
        let trustee = self
            .incoming
            .get(&node)
            .map(|ix| ix.iter().map(|&i| self.edges[i].source).collect())
            .unwrap_or_default();
        (trustor, trustee)
    }

    /// Indices into [`Snapshot::edges`] of the non-loop edges leaving `node`.
    pub fn out_edges(&self, node: NodeId) -> &[usize] {
        self.outgoing.get(&node).map_or(&[], Vec::as_slice)
    }

    /// Indices into [`Snapshot::edges`] of the non-loop edges entering `node`.
    pub fn in_edges(&self, node: NodeId) -> &[usize] {
        self.incoming.get(&node).map_or(&[], Vec::as_slice)
    }

    /// Copy with `extra` edges appended.
    pub fn with_extra_edges(&self, extra: &[TrustEdge]) -> Self {
        let mut edges = self.edges.clone();
        edges.extend_from_slice(extra);
        Self::new(self.index, self.window, edges)
    }

    /// Union of several snapshots as one cumulative snapshot.
    pub fn merged(index: usize, parts: &[Snapshot]) -> Self {
        let edges: Vec<TrustEdge> = parts.iter().flat_map(|s| s.edges.iter().copied()).collect();
        let start = parts.first().map_or(0.0, |s| s.window.0);
        let end = parts.last().map_or(0.0, |s| s.window.1);
        Self::new(index, (start, end), edges)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bitcoin_scheme_maps_signs() {
        let s = TrustLevelScheme::bitcoin();
        assert_eq!(s.map_rating(10.0), Some(1));
        assert_eq!(s.map_rating(1.0), Some(1));
        assert_eq!(s.map_rating(-1.0), Some(0));
        assert_eq!(s.map_rating(-10.0), Some(0));
        assert_eq!(s.map_rating(0.0), None);
        assert_eq!(s.map_rating(11.0), None);
    }

    #[test]
    fn advogato_scheme_has_four_levels() {
        let s = TrustLevelScheme::advogato();
        assert_eq!(s.cardinality(), 4);
        assert_eq!(s.map_rating(1.0), Some(3));
        assert_eq!(s.map_rating(0.5), None);
    }

    #[test]
    fn neighbor_sets_single_edge() {
        let snap = Snapshot::new(0, (0.0, 1.0), vec![TrustEdge::new(0, 1, 1, 0.0)]);
        assert_eq!(snap.neighbor_sets(1), (vec![], vec![0]));
        assert_eq!(snap.neighbor_sets(0), (vec![1], vec![]));
        assert_eq!(snap.neighbor_sets(7), (vec![], vec![]));
    }

    #[test]
    fn neighbor_sets_by_hand() {
        // a=0, b=1, u=2, c=3: a->u, b->u, u->c
        let edges = vec![
            TrustEdge::new(0, 2, 1, 0.0),
            TrustEdge::new(1, 2, 0, 1.0),
            TrustEdge::new(2, 3, 1, 2.0),
        ];
        let snap = Snapshot::new(0, (0.0, 2.0), edges);
        let (trustor, mut trustee) = snap.neighbor_sets(2);
        trustee.sort();
        assert_eq!(trustor, vec![3]);
        assert_eq!(trustee, vec![0, 1]);
    }

    #[test]
    fn parallel_edges_are_a_multiset_and_self_loops_dropped() {
        let edges = vec![
            TrustEdge::new(0, 1, 1, 0.0),
            TrustEdge::new(0, 1, 0, 1.0),
            TrustEdge::new(1, 1, 1, 2.0),
        ];
        let snap = Snapshot::new(0, (0.0, 2.0), edges);
        assert_eq!(snap.neighbor_sets(1).1, vec![0, 0]);
        assert_eq!(snap.neighbor_sets(1).0, Vec::<NodeId>::new());
    }

    #[test]
    fn graph_rejects_bad_levels() {
        let r = DynamicGraph::new(TrustLevelScheme::bitcoin(), vec![TrustEdge::new(0, 1, 2, 0.0)], 2);
        assert!(matches!(r, Err(GraphError::Level { .. })));
    }
}
