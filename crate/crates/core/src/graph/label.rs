use serde::{Deserialize, Serialize};

use super::{GraphError, NodeId, Polarity, TrustEdge, TrustLevelScheme};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Good,
    Bad,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeLabel {
    pub node: NodeId,
    pub label: Label,
}

/// Labels every node that touches `edges`: Good when its incident edges
/// (in and out) carry strictly more positive than negative levels, Bad
/// otherwise. Output is sorted by node.
pub fn label_nodes(edges: &[TrustEdge], scheme: &TrustLevelScheme) -> Result<Vec<NodeLabel>, GraphError> {
    if scheme.polarity.is_none() {
        return Err(GraphError::UnsupportedLabeling(scheme.name.clone()));
    }
    let n = edges.iter().map(|e| e.source.max(e.target) + 1).max().unwrap_or(0);
    let mut balance = vec![0i64; n];
    let mut seen = vec![false; n];
    for e in edges {
        let delta = match scheme.polarity(e.level) {
            Some(Polarity::Positive) => 1,
            Some(Polarity::Negative) => -1,
            None => {
                return Err(GraphError::Level {
                    level: e.level,
                    cardinality: scheme.cardinality(),
                })
            }
        };
        balance[e.source] += delta;
        seen[e.source] = true;
        if e.target != e.source {
            balance[e.target] += delta;
            seen[e.target] = true;
        }
    }
    Ok((0..n)
        .filter(|&i| seen[i])
        .map(|node| NodeLabel {
            node,
            label: if balance[node] > 0 { Label::Good } else { Label::Bad },
        })
        .collect())
}

/// Fraction of edges whose endpoints share a label.
pub fn edge_homophily_ratio(edges: &[TrustEdge], labels: &[NodeLabel]) -> Result<f64, GraphError> {
    if edges.is_empty() {
        return Err(GraphError::UndefinedRatio);
    }
    let n = labels.iter().map(|l| l.node + 1).max().unwrap_or(0);
    let mut lookup = vec![None; n];
    for l in labels {
        lookup[l.node] = Some(l.label);
    }
    let get = |v: NodeId| lookup.get(v).copied().flatten().ok_or(GraphError::MissingLabel(v));
    let mut same = 0usize;
    for e in edges {
        if get(e.source)? == get(e.target)? {
            same += 1;
        }
    }
    Ok(same as f64 / edges.len() as f64)
}
