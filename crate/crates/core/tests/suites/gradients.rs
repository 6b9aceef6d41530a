//! Reverse-mode gradients against central differences, per primitive and
//! through the whole model.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trustguard::autodiff::gradcheck::check_gradients;
use trustguard::autodiff::{Segments, Tape, Tensor, TensorError, Var};
use trustguard::graph::{Snapshot, TrustEdge};
use trustguard::model::{Mode, ModelConfig, Session, SnapshotPlan, TrustGuard};

const STEP: f64 = 1e-6;
const PRIMITIVE_TOL: f64 = 1e-4;
const MODEL_TOL: f64 = 1e-3;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Entries bounded away from zero, so kinks stay out of the difference
/// stencil.
fn away_from_zero(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let v = (0..rows * cols)
        .map(|_| {
            let x: f64 = rng.random_range(0.2..1.0);
            if rng.random_bool(0.5) {
                x
            } else {
                -x
            }
        })
        .collect();
    Tensor::matrix(rows, cols, v).unwrap()
}

fn positive(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(0.1..2.0)).collect()).unwrap()
}

/// Scalar from any tensor through fixed random weights.
fn reduce(tape: &mut Tape, v: Var) -> Result<Var, TensorError> {
    let (r, c) = tape.value(v).dims();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let w = tape.constant(random(r, c, &mut rng));
    let p = tape.mul(v, w)?;
    Ok(tape.sum_all(p))
}

fn assert_close<F>(name: &str, inputs: &[Tensor], build: F)
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let check = check_gradients(inputs, STEP, build).unwrap();
    assert!(
        check.max_error() < PRIMITIVE_TOL,
        "{name}: relative errors {:?}",
        check.relative_errors
    );
}

pub fn every_primitive_matches_central_differences() {
    for seed in 0..4 {
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random(3, 4, rng), random(4, 5, rng));
        assert_close("matmul", &[a.clone(), b], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            reduce(t, y)
        });
        let bt = random(5, 4, rng);
        assert_close("matmul_bt", &[a.clone(), bt], |t, v| {
            let y = t.matmul_bt(v[0], v[1])?;
            reduce(t, y)
        });
        assert_close("transpose", &[a.clone()], |t, v| {
            let y = t.transpose(v[0]);
            reduce(t, y)
        });
        let a2 = random(3, 4, rng);
        for (name, op) in [
            ("add", Tape::add as fn(&mut Tape, Var, Var) -> Result<Var, TensorError>),
            ("sub", Tape::sub),
            ("mul", Tape::mul),
        ] {
            assert_close(name, &[a.clone(), a2.clone()], |t, v| {
                let y = op(t, v[0], v[1])?;
                reduce(t, y)
            });
        }
        assert_close("add_row", &[a.clone(), random(1, 4, rng)], |t, v| {
            let y = t.add_row(v[0], v[1])?;
            reduce(t, y)
        });
        assert_close("mul_col", &[a.clone(), random(3, 1, rng)], |t, v| {
            let y = t.mul_col(v[0], v[1])?;
            reduce(t, y)
        });
        assert_close("scale", &[a.clone()], |t, v| {
            let y = t.scale(v[0], -1.7);
            reduce(t, y)
        });
        assert_close("relu", &[away_from_zero(3, 4, rng)], |t, v| {
            let y = t.relu(v[0]);
            reduce(t, y)
        });
        assert_close("softmax_rows", &[random(3, 4, rng)], |t, v| {
            let y = t.softmax_rows(v[0]);
            reduce(t, y)
        });
        assert_close("ln_clamped", &[positive(3, 4, rng)], |t, v| {
            let y = t.ln_clamped(v[0], 1e-12);
            reduce(t, y)
        });
        assert_close("concat_cols", &[a.clone(), random(3, 2, rng)], |t, v| {
            let y = t.concat_cols(&[v[0], v[1]])?;
            reduce(t, y)
        });
        assert_close("slice_cols", &[a.clone()], |t, v| {
            let y = t.slice_cols(v[0], 1, 3)?;
            reduce(t, y)
        });
        assert_close("gather_rows", &[a.clone()], |t, v| {
            let y = t.gather_rows(v[0], Arc::from([2, 0, 2, 1]))?;
            reduce(t, y)
        });
        assert_close("overwrite_rows", &[random(5, 4, rng), random(2, 4, rng)], |t, v| {
            let y = t.overwrite_rows(v[0], v[1], Arc::from([3, 1]))?;
            reduce(t, y)
        });
        assert_close("row_norm", &[away_from_zero(3, 4, rng)], |t, v| {
            let y = t.row_norm(v[0]);
            reduce(t, y)
        });
        assert_close("row_cosine", &[away_from_zero(3, 4, rng), away_from_zero(3, 4, rng)], |t, v| {
            let y = t.row_cosine(v[0], v[1])?;
            reduce(t, y)
        });
        assert_close("row_dot", &[a.clone(), a2.clone()], |t, v| {
            let y = t.row_dot(v[0], v[1])?;
            reduce(t, y)
        });
        assert_close("row_sum", &[a.clone()], |t, v| {
            let y = t.row_sum(v[0]);
            reduce(t, y)
        });
        assert_close("sum_squares", &[a.clone()], |t, v| Ok(t.sum_squares(v[0])));
        let factors: Arc<[f64]> = (0..12).map(|i| if i % 3 == 0 { 0.0 } else { 1.5 }).collect();
        assert_close("const_mul", &[a.clone()], |t, v| {
            let y = t.const_mul(v[0], factors.clone())?;
            reduce(t, y)
        });
        assert_close("dropout", &[a.clone()], |t, v| {
            let mut r = ChaCha8Rng::seed_from_u64(5);
            let y = t.dropout(v[0], 0.5, &mut r)?;
            reduce(t, y)
        });
        let seg = Arc::new(Segments::new(vec![0, 0, 1, 1, 1, 2], 3).unwrap());
        assert_close("segment_normalize", &[positive(6, 1, rng)], |t, v| {
            let y = t.segment_normalize(v[0], seg.clone())?;
            reduce(t, y)
        });
        assert_close("segment_weighted_sum", &[random(6, 3, rng), random(6, 1, rng)], |t, v| {
            let y = t.segment_weighted_sum(v[0], v[1], seg.clone())?;
            reduce(t, y)
        });
        assert_close("pick_cols", &[a.clone()], |t, v| {
            let y = t.pick_cols(v[0], Arc::from([3, 0, 2]))?;
            reduce(t, y)
        });
        let weights: Arc<[f64]> = Arc::from([0.5, -2.0, 1.25]);
        assert_close("weighted_sum", &[random(3, 1, rng)], |t, v| {
            t.weighted_sum(v[0], weights.clone())
        });
    }
}

/// Four nodes over two snapshots; node 3 is absent from the first.
fn four_node_instance() -> Vec<Snapshot> {
    vec![
        Snapshot::new(
            0,
            (0.0, 1.0),
            vec![
                TrustEdge::new(0, 1, 1, 0.1),
                TrustEdge::new(1, 2, 0, 0.2),
                TrustEdge::new(2, 0, 1, 0.3),
                TrustEdge::new(0, 2, 1, 0.4),
            ],
        ),
        Snapshot::new(
            1,
            (1.0, 2.0),
            vec![
                TrustEdge::new(3, 0, 1, 1.1),
                TrustEdge::new(1, 3, 0, 1.2),
                TrustEdge::new(2, 1, 1, 1.3),
                TrustEdge::new(0, 1, 1, 1.4),
            ],
        ),
    ]
}

fn model_loss(model: &TrustGuard, plans: &[SnapshotPlan], session: &mut Session) -> Var {
    let nodes = [0, 1, 2, 3];
    let fwd = model.forward(session, plans, &nodes, Mode::Eval, false).unwrap();
    let probs = model
        .edge_probabilities(session, fwd.embeddings, Arc::from([0, 1, 3, 2]), Arc::from([1, 2, 0, 3]))
        .unwrap();
    model
        .loss(session, probs, Arc::from([1, 0, 1, 0]), &[1.0, 2.0, 1.0, 2.0], 1e-5)
        .unwrap()
}

fn end_to_end_error(config: ModelConfig) -> f64 {
    let snapshots = four_node_instance();
    let plans: Vec<SnapshotPlan> = snapshots.iter().map(SnapshotPlan::new).collect();
    let mut model = TrustGuard::new(config, 4, 2, 17).unwrap();

    let mut session = Session::new();
    let loss = model_loss(&model, &plans, &mut session);
    session.tape.backward(loss).unwrap();
    model.store.accumulate_grads(&session.tape);

    let names: Vec<String> = model.store.names().map(str::to_string).collect();
    let mut worst: f64 = 0.0;
    for name in names {
        let analytic = model.store.get(&name).unwrap().grad().unwrap().to_vec();
        let mut numeric = vec![0.0; analytic.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let value = |delta: f64, model: &mut TrustGuard| {
                model.store.get_mut(&name).unwrap().values_mut()[i] += delta;
                let mut s = Session::new();
                let l = model_loss(model, &plans, &mut s);
                s.tape.value(l).item().unwrap()
            };
            let plus = value(STEP, &mut model);
            let minus = value(-2.0 * STEP, &mut model);
            value(STEP, &mut model);
            *slot = (plus - minus) / (2.0 * STEP);
        }
        let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        if scale > 0.0 {
            worst = worst.max(diff / scale);
        }
    }
    worst
}

pub fn whole_model_matches_central_differences() {
    let mut config = ModelConfig {
        initial_dim: 6,
        ..ModelConfig::default()
    };
    // three layers, narrow enough for per-entry differences
    config.spatial.layer_dims = vec![4, 6, 4];
    config.temporal.heads = 2;
    let err = end_to_end_error(config.clone());
    assert!(err < MODEL_TOL, "attention model: {err}");

    config.spatial.defense_enabled = false;
    config.spatial.layer_dims = vec![5, 4];
    config.learn_initial = true;
    config.predictor_hidden = Some(5);
    let err = end_to_end_error(config);
    assert!(err < MODEL_TOL, "uniform model with learned inputs: {err}");
}
