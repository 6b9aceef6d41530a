//! Invariants over random inputs: coefficient and attention simplices,
//! pruning, segmentation partitions, split hygiene, metric oracles and
//! determinism.

use std::collections::BTreeSet;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trustguard::attack::{AttackKind, AttackSpec};
use trustguard::autodiff::Tensor;
use trustguard::eval::{auc, balanced_accuracy, f1_macro, mcc, prepare_subtask, run_task, Confusion, TaskKind, TaskSpec};
use trustguard::graph::{segment, DynamicGraph, Segmentation, TrustEdge, TrustLevelScheme};
use trustguard::spatial::{prune_and_renormalize, robust_coefficients};
use trustguard::synth::{generate, SynthConfig};
use trustguard::temporal::attention_scores;
use trustguard::train::{train, TrainConfig};

fn vectors(n: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, dim), n)
}

/// Runs `test` over cases drawn from `strategy`, panicking with the
/// shrunk counterexample on failure.
fn check<S: Strategy>(strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>)
where
    S::Value: std::fmt::Debug,
{
    let config = Config {
        failure_persistence: None,
        ..Config::default()
    };
    let rng = TestRng::deterministic_rng(config.rng_algorithm);
    let mut runner = TestRunner::new_with_rng(config, rng);
    if let Err(e) = runner.run(&strategy, test) {
        panic!("{e}");
    }
}

pub fn robust_coefficients_form_a_simplex() {
    let strategy = (
        prop::collection::vec(-1.0f64..1.0, 5),
        (1usize..9).prop_flat_map(|n| vectors(n, 5)),
        0.0f64..1.0,
        any::<bool>(),
    );
    check(strategy, |(center, nbrs, thr, defense)| {
        let refs: Vec<&[f64]> = nbrs.iter().map(Vec::as_slice).collect();
        let r = robust_coefficients(&center, &refs, thr, defense);
        prop_assert_eq!(r.len(), nbrs.len());
        prop_assert!(r.iter().all(|&x| (0.0..=1.0 + 1e-12).contains(&x)));
        prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        if !defense {
            prop_assert!(r.iter().all(|&x| (x - 1.0 / nbrs.len() as f64).abs() < 1e-12));
        }
        Ok(())
    });
}

pub fn pruning_drops_small_entries_unless_all_would_go() {
    check((prop::collection::vec(0.0f64..1.0, 1..10), 0.0f64..1.0), |(raw, thr)| {
        let total: f64 = raw.iter().sum();
        prop_assume!(total > 0.0);
        let normalized: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let pruned = prune_and_renormalize(&normalized, thr);
        prop_assert!((pruned.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        if normalized.iter().all(|&x| x < thr) {
            // nothing survives: every neighbor is kept
            for (p, n) in pruned.iter().zip(&normalized) {
                prop_assert!((p - n).abs() < 1e-12);
            }
        } else {
            let kept: f64 = normalized.iter().filter(|&&x| x >= thr).sum();
            for (p, n) in pruned.iter().zip(&normalized) {
                if *n < thr {
                    prop_assert_eq!(*p, 0.0);
                } else {
                    prop_assert!((p - n / kept).abs() < 1e-12);
                }
            }
        }
        Ok(())
    });
}

pub fn attention_scores_form_a_simplex() {
    let strategy = (
        (1usize..8).prop_flat_map(|n| vectors(n, 4)),
        prop::collection::vec(-1.0f64..1.0, 8),
        prop::collection::vec(-1.0f64..1.0, 8),
    );
    check(strategy, |(seq, wq, wk)| {
        let wq = Tensor::matrix(2, 4, wq).unwrap();
        let wk = Tensor::matrix(2, 4, wk).unwrap();
        let a = attention_scores(&seq, &wq, &wk).unwrap();
        prop_assert_eq!(a.len(), seq.len());
        prop_assert!(a.iter().all(|&x| x >= 0.0));
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        Ok(())
    });
}

pub fn segmentations_partition_the_edges() {
    check((prop::collection::vec(0.0f64..1000.0, 1..80), 1usize..12), |(times, n)| {
        let edges: Vec<TrustEdge> = times
            .iter()
            .enumerate()
            .map(|(i, &t)| TrustEdge::new(i % 7, (i % 7 + 1 + i % 3) % 9, i % 2, t))
            .collect();
        let graph = DynamicGraph::new(TrustLevelScheme::bitcoin(), edges, 9).unwrap();
        for how in [Segmentation::Time, Segmentation::Event] {
            let snaps = segment(&graph, n, how).unwrap();
            prop_assert_eq!(snaps.len(), n);
            let total: usize = snaps.iter().map(|s| s.edges().len()).sum();
            prop_assert_eq!(total, graph.edges().len());
            let mut keys: Vec<_> = snaps.iter().flat_map(|s| s.edges().iter().map(|e| e.key())).collect();
            let mut expected: Vec<_> = graph.edges().iter().map(|e| e.key()).collect();
            keys.sort_unstable();
            expected.sort_unstable();
            prop_assert_eq!(keys, expected);
            // snapshots are ordered in time
            for w in snaps.windows(2) {
                let last = w[0].edges().iter().map(|e| e.timestamp).fold(f64::MIN, f64::max);
                let first = w[1].edges().iter().map(|e| e.timestamp).fold(f64::MAX, f64::min);
                prop_assert!(w[0].edges().is_empty() || w[1].edges().is_empty() || last <= first);
            }
            if how == Segmentation::Event {
                let sizes: Vec<usize> = snaps.iter().map(|s| s.edges().len()).collect();
                let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
                prop_assert!(hi - lo <= 1);
            } else {
                for s in &snaps {
                    for e in s.edges() {
                        prop_assert!(e.timestamp >= s.window.0 && e.timestamp <= s.window.1);
                    }
                }
            }
        }
        Ok(())
    });
}

/// Brute-force binary counts from raw labels.
fn counts(truth: &[bool], pred: &[bool]) -> (u64, u64, u64, u64) {
    let mut c = (0, 0, 0, 0);
    for (&t, &p) in truth.iter().zip(pred) {
        match (t, p) {
            (true, true) => c.0 += 1,
            (false, false) => c.1 += 1,
            (false, true) => c.2 += 1,
            (true, false) => c.3 += 1,
        }
    }
    c
}

fn oracle_mcc(tp: f64, tn: f64, fp: f64, fn_: f64) -> f64 {
    let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    if den == 0.0 {
        0.0
    } else {
        (tp * tn - fp * fn_) / den
    }
}

fn oracle_f1(tp: f64, fp: f64, fn_: f64) -> f64 {
    let den = tp + (fp + fn_) / 2.0;
    if den == 0.0 {
        0.0
    } else {
        tp / den
    }
}

fn oracle_auc(scores: &[f64], truth: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &ti) in truth.iter().enumerate() {
        for (j, &tj) in truth.iter().enumerate() {
            if ti && !tj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

pub fn metrics_match_brute_force_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let n = rng.random_range(2..60);
        let bias = rng.random_range(0.05..0.95);
        let mut truth: Vec<bool> = (0..n).map(|_| rng.random_bool(bias)).collect();
        truth[0] = true;
        truth[1] = false;
        let pred: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let (tp, tn, fp, fn_) = counts(&truth, &pred);
        let c = Confusion::binary(tp, tn, fp, fn_);
        let (tpf, tnf, fpf, fnf) = (tp as f64, tn as f64, fp as f64, fn_ as f64);

        assert_eq!(mcc(&c), oracle_mcc(tpf, tnf, fpf, fnf));
        let tpr = tpf / (tpf + fnf);
        let tnr = tnf / (tnf + fpf);
        assert_eq!(balanced_accuracy(&c), (tnr + tpr) / 2.0);
        // class 0 first, as in the per-class loop
        let f1 = (oracle_f1(tnf, fnf, fpf) + oracle_f1(tpf, fpf, fnf)) / 2.0;
        assert_eq!(f1_macro(&c), f1);

        // coarse scores force ties
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 / 8.0).collect();
        let a = auc(&scores, &truth).unwrap();
        assert!((a - oracle_auc(&scores, &truth)).abs() < 1e-12);
    }
}

pub fn multiclass_mcc_reduces_to_the_binary_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let n = rng.random_range(4..50);
        let truths: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let c = Confusion::from_pairs(&truths, &preds, 3);
        let m = mcc(&c);
        assert!((-1.0..=1.0).contains(&m));
        // merging class 2 into class 1 gives a binary problem with the
        // two-class formula
        let t2: Vec<usize> = truths.iter().map(|&t| t.min(1)).collect();
        let p2: Vec<usize> = preds.iter().map(|&p| p.min(1)).collect();
        let b = Confusion::from_pairs(&t2, &p2, 2);
        let padded = Confusion {
            counts: vec![
                vec![b.counts[0][0], b.counts[0][1], 0],
                vec![b.counts[1][0], b.counts[1][1], 0],
                vec![0, 0, 0],
            ],
        };
        assert!((mcc(&padded) - mcc(&b)).abs() < 1e-12);
    }
}

pub fn coin_flips_average_half_balanced_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 100_000;
    let truth: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let pred: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    let (tp, tn, fp, fn_) = counts(&truth, &pred);
    let ba = balanced_accuracy(&Confusion::binary(tp, tn, fp, fn_));
    assert!((ba - 0.5).abs() < 0.01, "{ba}");
}

fn small_graph() -> DynamicGraph {
    generate(&SynthConfig {
        nodes: 120,
        events: 500,
        ..SynthConfig::default()
    })
    .unwrap()
    .graph
}

pub fn splits_are_disjoint_and_respect_observation() {
    let graph = small_graph();
    let snaps = segment(&graph, 10, Segmentation::Time).unwrap();
    for t in 2..=9 {
        let obs = prepare_subtask(&graph, &snaps, &TaskSpec::standard(TaskKind::SingleObserved), t, 0).unwrap();
        let unobs = prepare_subtask(&graph, &snaps, &TaskSpec::standard(TaskKind::SingleUnobserved), t, 0).unwrap();
        let train: BTreeSet<_> = obs.train_snapshots.iter().flat_map(|s| s.edges().iter().map(|e| e.key())).collect();
        for e in obs.test_edges.iter().chain(&unobs.test_edges) {
            assert!(!train.contains(&e.key()));
        }
        for e in &obs.test_edges {
            assert!(obs.observed.contains(&e.source) && obs.observed.contains(&e.target));
        }
        for e in &unobs.test_edges {
            assert!(!unobs.observed.contains(&e.source) || !unobs.observed.contains(&e.target));
        }
        let a: BTreeSet<_> = obs.test_edges.iter().map(|e| e.key()).collect();
        assert!(unobs.test_edges.iter().all(|e| !a.contains(&e.key())));
        assert_eq!(
            a.len() + unobs.test_edges.len(),
            snaps[t].edges().len(),
            "observed and unobserved test sets cover the next snapshot"
        );
    }
}

pub fn injected_edges_never_reach_the_test_set() {
    let graph = small_graph();
    let snaps = segment(&graph, 10, Segmentation::Time).unwrap();
    for kind in [AttackKind::BadMouthing, AttackKind::GoodMouthing, AttackKind::OnOff] {
        let clean = TaskSpec::robustness(TaskKind::SingleObserved, None);
        let attacked = TaskSpec::robustness(TaskKind::SingleObserved, Some(AttackSpec::new(kind, 4)));
        let a = prepare_subtask(&graph, &snaps, &clean, 7, 1).unwrap();
        let b = prepare_subtask(&graph, &snaps, &attacked, 7, 1).unwrap();
        assert_eq!(a.test_edges, b.test_edges);
        assert_eq!(a.split_hash, b.split_hash);
        let report = b.injection.unwrap();
        assert!(!report.injected.is_empty());
        let test: BTreeSet<_> = b.test_edges.iter().map(|e| e.key()).collect();
        assert!(report.injected.iter().all(|e| !test.contains(&e.edge.key())));
    }
}

pub fn identical_runs_are_byte_identical() {
    let graph = small_graph();
    let snaps = segment(&graph, 10, Segmentation::Time).unwrap();
    let config = TrainConfig {
        max_epochs: 4,
        seed: 9,
        ..TrainConfig::default()
    };
    let bytes = || {
        let model = train(&snaps[..5], graph.node_count(), &config).unwrap();
        let mut out = Vec::new();
        model.write_checkpoint(&mut out).unwrap();
        model.write_history(&mut out).unwrap();
        out
    };
    assert_eq!(bytes(), bytes());

    let mut spec = TaskSpec::standard(TaskKind::SingleObserved);
    spec.train_upto = vec![3, 6];
    spec.seeds = vec![0, 1];
    let report = || serde_json::to_vec(&run_task(&graph, &spec, &config).unwrap()).unwrap();
    assert_eq!(report(), report());
}
