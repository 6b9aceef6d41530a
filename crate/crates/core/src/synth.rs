//! Seeded generator of rating networks with the broad shape of small
//! who-trusts-whom marketplaces: a minority of bad actors, heavy-tailed
//! activity, communities, reciprocal ratings and nodes that turn bad.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DynamicGraph, Label, TrustEdge, TrustLevelScheme};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub nodes: usize,
    /// Rating events before reciprocation.
    pub events: usize,
    /// Share of nodes that are bad from the start.
    pub bad_fraction: f64,
    /// Share of good nodes that turn bad at a random time.
    pub turn_fraction: f64,
    pub communities: usize,
    /// Probability that a rating stays inside the rater's community.
    pub community_affinity: f64,
    /// Probability that a rating is answered by a rating in the other
    /// direction.
    pub reciprocity: f64,
    /// Probability that a good rater misjudges a rating.
    pub noise: f64,
    /// Pareto shape of node activity (smaller is heavier-tailed).
    pub activity_shape: f64,
    pub start_time: f64,
    pub duration: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            nodes: 600,
            events: 3000,
            bad_fraction: 0.08,
            turn_fraction: 0.05,
            communities: 8,
            community_affinity: 0.8,
            reciprocity: 0.35,
            noise: 0.04,
            activity_shape: 1.6,
            start_time: 1_289_000_000.0,
            duration: 1.5e8,
            seed: 7,
        }
    }
}

impl SynthConfig {
    /// Roughly the node and edge counts of the larger marketplace network.
    pub fn marketplace_scale(seed: u64) -> Self {
        Self {
            nodes: 5881,
            events: 26_500,
            seed,
            ..Self::default()
        }
    }
}

/// The generated graph with the latent label of every node at the end of
/// the observation period.
#[derive(Clone, Debug)]
pub struct SynthGraph {
    pub graph: DynamicGraph,
    pub latent: Vec<Label>,
}

struct Node {
    community: usize,
    activity: f64,
    join: f64,
    /// Time after which the node behaves badly (`f64::INFINITY` if never).
    turn: f64,
}

impl Node {
    fn bad_at(&self, t: f64) -> bool {
        t >= self.turn
    }
}

/// Weighted sampling over a prefix of a list.
struct Prefix {
    items: Vec<usize>,
    cumulative: Vec<f64>,
}

impl Prefix {
    fn new(items: Vec<usize>, weight: impl Fn(usize) -> f64) -> Self {
        let mut acc = 0.0;
        let cumulative = items
            .iter()
            .map(|&i| {
                acc += weight(i);
                acc
            })
            .collect();
        Self { items, cumulative }
    }

    /// Samples among the first `len` items.
    fn sample<R: Rng>(&self, len: usize, rng: &mut R) -> Option<usize> {
        if len == 0 {
            return None;
        }
        let total = self.cumulative[len - 1];
        let x = rng.random::<f64>() * total;
        let k = self.cumulative[..len].partition_point(|&c| c <= x).min(len - 1);
        Some(self.items[k])
    }
}

fn pareto<R: Rng>(shape: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random_range(f64::EPSILON..1.0);
    u.powf(-1.0 / shape)
}

fn rate<R: Rng>(rater_bad: bool, ratee_bad: bool, noise: f64, rng: &mut R) -> usize {
    let trust = match (rater_bad, ratee_bad) {
        (false, false) => !rng.random_bool(noise),
        (false, true) => rng.random_bool(noise * 3.0),
        (true, true) => rng.random_bool(0.9),
        (true, false) => rng.random_bool(0.5),
    };
    usize::from(trust)
}

pub fn generate(config: &SynthConfig) -> Result<SynthGraph> {
    if config.nodes < 2 || config.events == 0 || config.communities == 0 {
        return Err(Error::config("synthetic graph needs at least 2 nodes, 1 event and 1 community"));
    }
    if !(config.duration > 0.0) {
        return Err(Error::config("synthetic duration must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.nodes;
    let end = config.start_time + config.duration;
    let mut nodes: Vec<Node> = (0..n)
        .map(|i| {
            // a fifth of the nodes exist from the start, the rest join over time
            let join = if i < n / 5 {
                config.start_time
            } else {
                config.start_time + config.duration * rng.random::<f64>().powf(1.3)
            };
            let turn = if rng.random_bool(config.bad_fraction) {
                f64::NEG_INFINITY
            } else if rng.random_bool(config.turn_fraction) {
                join + (end - join) * rng.random::<f64>()
            } else {
                f64::INFINITY
            };
            Node {
                community: rng.random_range(0..config.communities),
                activity: pareto(config.activity_shape, &mut rng),
                join,
                turn,
            }
        })
        .collect();
    // bad actors are less active and rarely stay long
    for node in nodes.iter_mut().filter(|n| n.turn == f64::NEG_INFINITY) {
        node.activity *= 0.6;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| nodes[a].join.total_cmp(&nodes[b].join).then(a.cmp(&b)));
    let joins: Vec<f64> = order.iter().map(|&i| nodes[i].join).collect();
    let all = Prefix::new(order.clone(), |i| nodes[i].activity);
    let by_community: Vec<(Prefix, Vec<f64>)> = (0..config.communities)
        .map(|c| {
            let members: Vec<usize> = order.iter().copied().filter(|&i| nodes[i].community == c).collect();
            let j = members.iter().map(|&i| nodes[i].join).collect();
            (Prefix::new(members, |i| nodes[i].activity), j)
        })
        .collect();

    let mut times: Vec<f64> = (0..config.events)
        .map(|_| config.start_time + config.duration * rng.random::<f64>().powf(0.8))
        .collect();
    times.sort_by(f64::total_cmp);

    let mut edges = Vec::with_capacity(config.events * 2);
    for &t in &times {
        let active = joins.partition_point(|&j| j <= t);
        let Some(u) = all.sample(active, &mut rng) else { continue };
        let v = if rng.random_bool(config.community_affinity) {
            let (prefix, j) = &by_community[nodes[u].community];
            prefix.sample(j.partition_point(|&x| x <= t), &mut rng)
        } else {
            all.sample(active, &mut rng)
        };
        let Some(v) = v.filter(|&v| v != u) else { continue };
        let level = rate(nodes[u].bad_at(t), nodes[v].bad_at(t), config.noise, &mut rng);
        edges.push(TrustEdge::new(u, v, level, t));
        if rng.random_bool(config.reciprocity) {
            let back_t = (t + config.duration * 1e-3 * rng.random::<f64>()).min(end);
            let back = rate(nodes[v].bad_at(back_t), nodes[u].bad_at(back_t), config.noise, &mut rng);
            edges.push(TrustEdge::new(v, u, back, back_t));
        }
    }

    // keep only nodes that appear in some edge, renumbered densely
    let mut used = vec![false; n];
    for e in &edges {
        used[e.source] = true;
        used[e.target] = true;
    }
    let mut dense = vec![usize::MAX; n];
    let mut latent = Vec::new();
    let mut raw_ids = Vec::new();
    for i in 0..n {
        if used[i] {
            dense[i] = latent.len();
            raw_ids.push(i as i64 + 1);
            latent.push(if nodes[i].bad_at(end) { Label::Bad } else { Label::Good });
        }
    }
    let edges = edges
        .into_iter()
        .map(|e| TrustEdge::new(dense[e.source], dense[e.target], e.level, e.timestamp))
        .collect();
    let graph = DynamicGraph::new(TrustLevelScheme::bitcoin(), edges, latent.len())?.with_raw_ids(raw_ids);
    Ok(SynthGraph { graph, latent })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&SynthConfig::default()).unwrap();
        let b = generate(&SynthConfig::default()).unwrap();
        assert_eq!(a.graph, b.graph);
        let c = generate(&SynthConfig {
            seed: 8,
            ..SynthConfig::default()
        })
        .unwrap();
        assert_ne!(a.graph, c.graph);
    }

    #[test]
    fn mostly_trusting_with_some_distrust() {
        let g = generate(&SynthConfig::default()).unwrap();
        let counts = g.graph.level_counts();
        let share = counts[0] as f64 / (counts[0] + counts[1]) as f64;
        assert!((0.04..0.3).contains(&share), "distrust share {share}");
        assert!(g.graph.edges().iter().all(|e| !e.is_self_loop()));
    }
}
