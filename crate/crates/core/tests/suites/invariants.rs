//! Structural invariants of the graph, layers, loss and attacks on random
//! small instances.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trustguard::attack::{inject, AttackContext, AttackKind, AttackSpec};
use trustguard::autodiff::{Tape, Tensor};
use trustguard::graph::{edge_homophily_ratio, label_nodes, DynamicGraph, Snapshot, TrustEdge, TrustLevelScheme};
use trustguard::model::{Mode, ModelConfig, Session, SnapshotPlan, TrustGuard};
use trustguard::predictor::{weighted_ce_loss, PredictionResult};
use trustguard::spatial::{aggregate_role, param_names, robust_coefficients, spatial_forward, RoleMode};
use trustguard::temporal::attention_scores;

fn random_edges(rng: &mut ChaCha8Rng, nodes: usize, count: usize, t0: f64) -> Vec<TrustEdge> {
    (0..count)
        .map(|k| {
            let s = rng.random_range(0..nodes);
            let t = (s + rng.random_range(1..nodes)) % nodes;
            TrustEdge::new(s, t, rng.random_range(0..2), t0 + k as f64 * 1e-3)
        })
        .collect()
}

fn small_model(layers: Vec<usize>, nodes: usize, len: usize, seed: u64) -> TrustGuard {
    let mut config = ModelConfig {
        initial_dim: 5,
        ..ModelConfig::default()
    };
    config.spatial.layer_dims = layers;
    config.spatial.prune_threshold = 0.2;
    config.temporal.heads = 2;
    TrustGuard::new(config, nodes, len, seed).unwrap()
}

pub fn roles_are_dual_edge_for_edge() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let s = Snapshot::new(0, (0.0, 1.0), random_edges(&mut rng, 7, 15, 0.0));
        let mut out_pairs = Vec::new();
        let mut in_pairs = Vec::new();
        for &u in s.nodes() {
            let (as_trustor, as_trustee) = s.neighbor_sets(u);
            out_pairs.extend(as_trustor.into_iter().map(|v| (u, v)));
            in_pairs.extend(as_trustee.into_iter().map(|v| (v, u)));
        }
        out_pairs.sort_unstable();
        in_pairs.sort_unstable();
        let mut edges: Vec<_> = s.edges().iter().map(|e| (e.source, e.target)).collect();
        edges.sort_unstable();
        assert_eq!(out_pairs, in_pairs);
        assert_eq!(out_pairs, edges);
    }
}

pub fn homophily_ignores_node_numbering() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let scheme = TrustLevelScheme::bitcoin();
    for _ in 0..200 {
        let edges = random_edges(&mut rng, 10, 30, 0.0);
        let labels = label_nodes(&edges, &scheme).unwrap();
        let ratio = edge_homophily_ratio(&edges, &labels).unwrap();
        assert!((0.0..=1.0).contains(&ratio));

        let mut perm: Vec<usize> = (0..10).collect();
        perm.shuffle(&mut rng);
        let moved: Vec<TrustEdge> = edges
            .iter()
            .map(|e| TrustEdge::new(perm[e.source], perm[e.target], e.level, e.timestamp))
            .collect();
        let moved_labels = label_nodes(&moved, &scheme).unwrap();
        assert_eq!(edge_homophily_ratio(&moved, &moved_labels).unwrap(), ratio);
    }
}

pub fn softmax_rows_are_positive_and_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let scale = [1.0, 30.0, 300.0][rng.random_range(0..3)];
        let values: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(4, 5, values).unwrap());
        let y = tape.softmax_rows(x);
        let y = tape.value(y);
        for r in 0..4 {
            assert!(y.row(r).iter().all(|&p| p > 0.0));
            assert!((y.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

pub fn defense_off_aggregation_is_the_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let n = rng.random_range(1..8);
        let dim = rng.random_range(1..6);
        let msgs: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let center: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let refs: Vec<&[f64]> = msgs.iter().map(Vec::as_slice).collect();
        let coeffs = robust_coefficients(&center, &refs, 0.5, false);
        let got = aggregate_role(&msgs, &coeffs, dim).unwrap();
        for (c, g) in got.iter().enumerate() {
            let mean = msgs.iter().map(|m| m[c]).sum::<f64>() / n as f64;
            assert!((g - mean).abs() < 1e-12);
        }
    }
}

/// Undirected hop distances from `start` over the snapshot's edges.
fn hops(s: &Snapshot, start: usize, nodes: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; nodes];
    dist[start] = 0;
    let mut frontier = vec![start];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &u in &frontier {
            let (a, b) = s.neighbor_sets(u);
            for v in a.into_iter().chain(b) {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    next.push(v);
                }
            }
        }
        frontier = next;
    }
    dist
}

/// Removing edges whose endpoints are both `L` or more hops away leaves a
/// node's layer-`L` embedding untouched; removing an incident edge does not.
pub fn spatial_layers_are_local() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut changed = 0;
    for trial in 0..60 {
        let layers = rng.random_range(1..4);
        let nodes = 12;
        let model = small_model(vec![4; layers], nodes, 2, trial);
        let config = &model.config.spatial;
        let edges = random_edges(&mut rng, nodes, 16, 0.0);
        let full = Snapshot::new(0, (0.0, 1.0), edges.clone());
        let u = edges[0].source;
        let dist = hops(&full, u, nodes);
        let far: Vec<TrustEdge> = edges
            .iter()
            .copied()
            .filter(|e| dist[e.source].min(dist[e.target]) < layers)
            .collect();
        let carried = Tensor::zeros(vec![nodes, config.output_dim()]);
        let (a, _) = spatial_forward(&full, model.initial(), &carried, config, &model.store).unwrap();
        let (b, _) = spatial_forward(&Snapshot::new(0, (0.0, 1.0), far), model.initial(), &carried, config, &model.store).unwrap();
        assert_eq!(a.row(u), b.row(u), "trial {trial}: distant edges moved node {u}");

        let near: Vec<TrustEdge> = edges.iter().copied().skip(1).collect();
        let (c, _) = spatial_forward(&Snapshot::new(0, (0.0, 1.0), near), model.initial(), &carried, config, &model.store).unwrap();
        if c.row(u) != a.row(u) {
            changed += 1;
        }
    }
    assert!(changed > 30, "incident edges changed only {changed} of 60 embeddings");
}

pub fn roles_have_separate_parameters() {
    let model = small_model(vec![4, 4], 6, 2, 0);
    for layer in 1..=2 {
        let [te, tr, _, _] = param_names(layer);
        assert_ne!(te, tr);
        assert_ne!(model.store.get(&te).unwrap().values(), model.store.get(&tr).unwrap().values());
    }
    // node 1 rates node 2 and is rated by node 0
    let s = Snapshot::new(0, (0.0, 1.0), vec![TrustEdge::new(0, 1, 1, 0.1), TrustEdge::new(1, 2, 0, 0.2)]);
    let carried = Tensor::zeros(vec![3, 4]);
    let mut config = small_model(vec![4], 3, 2, 0).config.spatial;
    let store = small_model(vec![4], 3, 2, 0).store;
    let initial = small_model(vec![4], 3, 2, 0).initial().clone();
    config.roles = RoleMode::TrusteeOnly;
    let (te, _) = spatial_forward(&s, &initial, &carried, &config, &store).unwrap();
    config.roles = RoleMode::TrustorOnly;
    let (tr, _) = spatial_forward(&s, &initial, &carried, &config, &store).unwrap();
    assert_ne!(te.row(1), tr.row(1));
}

/// A node's temporal embedding depends on its own sequence only: batching
/// it with other nodes in any order gives the same row.
pub fn attention_is_per_node() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for trial in 0..20 {
        let nodes = 8;
        let snapshots: Vec<Snapshot> = (0..3)
            .map(|i| Snapshot::new(i, (i as f64, i as f64 + 1.0), random_edges(&mut rng, nodes, 10, i as f64)))
            .collect();
        let model = small_model(vec![4], nodes, 3, trial);
        let plans: Vec<SnapshotPlan> = snapshots.iter().map(SnapshotPlan::new).collect();
        let rows = |order: &[usize]| {
            let mut session = Session::new();
            let fwd = model.forward(&mut session, &plans, order, Mode::Eval, false).unwrap();
            let t = session.tape.value(fwd.embeddings).clone();
            order.iter().enumerate().map(|(r, &v)| (v, t.row(r).to_vec())).collect::<BTreeMap<_, _>>()
        };
        let all: Vec<usize> = (0..nodes).collect();
        let base = rows(&all);
        let mut shuffled = all.clone();
        shuffled.shuffle(&mut rng);
        shuffled.truncate(rng.random_range(1..=nodes));
        for (v, row) in rows(&shuffled) {
            assert_eq!(row, base[&v], "trial {trial} node {v}");
        }
    }
}

/// With planted projections the attention concentrates on any chosen
/// timeslot.
pub fn attention_can_pick_any_timeslot() {
    let n = 5;
    let sequence: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let c = 8.0;
    for k in 0..n {
        // the query maps the last element onto the key of element k
        let mut wq = vec![0.0; n * n];
        wq[k * n + (n - 1)] = c;
        let wk: Vec<f64> = (0..n * n).map(|i| if i / n == i % n { c } else { 0.0 }).collect();
        let a = attention_scores(&sequence, &Tensor::matrix(n, n, wq).unwrap(), &Tensor::matrix(n, n, wk).unwrap()).unwrap();
        assert!(a[k] > 1.0 - 1e-6, "slot {k}: {a:?}");
    }
}

pub fn loss_terms_are_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = small_model(vec![4], 6, 2, 3);
    for _ in 0..100 {
        let preds: Vec<PredictionResult> = (0..12)
            .map(|_| {
                let p: f64 = rng.random_range(0.01..0.99);
                PredictionResult::from_probabilities(vec![1.0 - p, p])
            })
            .collect();
        let truths: Vec<usize> = (0..12).map(|_| rng.random_range(0..2)).collect();
        let beta = [rng.random_range(0.2..3.0), rng.random_range(0.2..3.0)];
        let store = &model.store;
        let lambda = rng.random_range(1e-6..1e-2);

        let plain = weighted_ce_loss(&preds, &truths, &beta, 0.0, store).unwrap();
        let penalized = weighted_ce_loss(&preds, &truths, &beta, lambda, store).unwrap();
        assert!((penalized - plain - lambda * store.squared_norm()).abs() < 1e-9);

        let class = rng.random_range(0..2);
        let own: f64 = preds
            .iter()
            .zip(&truths)
            .filter(|(_, &t)| t == class)
            .map(|(p, &t)| -beta[t] * p.probabilities[t].ln())
            .sum();
        let mut doubled = beta;
        doubled[class] *= 2.0;
        let more = weighted_ce_loss(&preds, &truths, &doubled, 0.0, store).unwrap();
        assert!((more - plain - own).abs() < 1e-9);
    }

    // the training loss on tape is the same function
    let snapshots: Vec<Snapshot> = (0..2)
        .map(|i| Snapshot::new(i, (i as f64, i as f64 + 1.0), random_edges(&mut rng, 6, 8, i as f64)))
        .collect();
    let plans: Vec<SnapshotPlan> = snapshots.iter().map(SnapshotPlan::new).collect();
    let nodes: Vec<usize> = (0..6).collect();
    let edges = snapshots[1].edges();
    let mut session = Session::new();
    let fwd = model.forward(&mut session, &plans, &nodes, Mode::Eval, false).unwrap();
    let sources: Arc<[usize]> = edges.iter().map(|e| e.source).collect();
    let targets: Arc<[usize]> = edges.iter().map(|e| e.target).collect();
    let probs = model.edge_probabilities(&mut session, fwd.embeddings, sources, targets).unwrap();
    let truths: Vec<usize> = edges.iter().map(|e| e.level).collect();
    let beta = [0.7, 1.3];
    let weights: Vec<f64> = truths.iter().map(|&t| beta[t]).collect();
    let loss = model.loss(&mut session, probs, truths.clone().into(), &weights, 1e-3).unwrap();
    let on_tape = session.tape.value(loss).item().unwrap();
    let p = session.tape.value(probs).to_rows();
    let preds: Vec<PredictionResult> = p.into_iter().map(PredictionResult::from_probabilities).collect();
    let direct = weighted_ce_loss(&preds, &truths, &beta, 1e-3, &model.store).unwrap();
    assert!((on_tape - direct).abs() < 1e-9 * direct.abs().max(1.0));
}

fn attack_setup(rng: &mut ChaCha8Rng) -> (Vec<Snapshot>, DynamicGraph) {
    let nodes = 30;
    let edges: Vec<TrustEdge> = (0..4).flat_map(|i| random_edges(rng, nodes, 40, i as f64)).collect();
    let graph = DynamicGraph::new(TrustLevelScheme::bitcoin(), edges, nodes).unwrap();
    let snapshots = trustguard::graph::segment(&graph, 4, trustguard::graph::Segmentation::Time).unwrap();
    (snapshots, graph)
}

/// Injection only adds edges, every added edge is in the report, and the
/// same seed gives the same report.
pub fn injection_is_conservative_and_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..20 {
        let (snapshots, graph) = attack_setup(&mut rng);
        let labels = label_nodes(graph.edges(), graph.scheme()).unwrap();
        let mut degrees = vec![0; graph.node_count()];
        for e in graph.edges() {
            degrees[e.source] += 1;
            degrees[e.target] += 1;
        }
        let region: Vec<usize> = (0..graph.node_count()).collect();
        let ctx = AttackContext {
            labels: &labels,
            region: &region,
            degrees: &degrees,
            node_count: graph.node_count(),
            levels: 2,
        };
        for kind in [AttackKind::BadMouthing, AttackKind::GoodMouthing, AttackKind::OnOff] {
            let mut spec = AttackSpec::new(kind, trial);
            spec.target_fraction = 0.3;
            spec.attacker_pool = 4;
            let (modified, report) = inject(&snapshots, &[3], &ctx, &spec).unwrap();
            let (_, again) = inject(&snapshots, &[3], &ctx, &spec).unwrap();
            assert_eq!(report, again);

            let counts = report.counts_per_position(snapshots.len());
            for (i, (before, after)) in snapshots.iter().zip(&modified).enumerate() {
                assert_eq!(after.edges().len(), before.edges().len() + counts[i], "{kind:?} position {i}");
                let mut added: BTreeMap<_, i64> = BTreeMap::new();
                for e in after.edges() {
                    *added.entry(e.key()).or_default() += 1;
                }
                for e in before.edges() {
                    *added.entry(e.key()).or_default() -= 1;
                }
                assert!(added.values().all(|&c| c >= 0), "{kind:?}: an original edge disappeared");
                let mut reported: BTreeMap<_, i64> = BTreeMap::new();
                for e in report.injected.iter().filter(|e| e.position == i) {
                    *reported.entry(e.edge.key()).or_default() += 1;
                }
                added.retain(|_, c| *c > 0);
                assert_eq!(added, reported, "{kind:?} position {i}");
            }
            if kind != AttackKind::OnOff {
                assert!(report.injected.iter().all(|e| e.malicious));
            }
        }
    }
}
