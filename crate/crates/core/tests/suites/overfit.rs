//! A six-node network small enough to memorize.

use trustguard::graph::{Snapshot, TrustEdge};
use trustguard::train::{train, TrainConfig};

pub const MAX_EPOCHS: usize = 200;

/// Nodes 0..3 vouch for each other and distrust 3..6.
pub fn toy_snapshots() -> Vec<Snapshot> {
    vec![
        Snapshot::new(
            0,
            (0.0, 1.0),
            vec![
                TrustEdge::new(0, 1, 1, 0.1),
                TrustEdge::new(1, 2, 1, 0.2),
                TrustEdge::new(0, 3, 0, 0.3),
                TrustEdge::new(2, 4, 0, 0.4),
            ],
        ),
        Snapshot::new(
            1,
            (1.0, 2.0),
            vec![
                TrustEdge::new(2, 0, 1, 1.1),
                TrustEdge::new(1, 5, 0, 1.2),
                TrustEdge::new(3, 4, 1, 1.3),
                TrustEdge::new(4, 1, 0, 1.4),
            ],
        ),
    ]
}

/// Training accuracy on the toy after at most [`MAX_EPOCHS`] epochs.
pub fn toy_training_accuracy() -> f64 {
    let snapshots = toy_snapshots();
    let config = TrainConfig {
        max_epochs: MAX_EPOCHS,
        patience: MAX_EPOCHS,
        validation_fraction: 0.0,
        ..TrainConfig::default()
    };
    let model = train(&snapshots, 6, &config).unwrap();
    let edges: Vec<TrustEdge> = snapshots.iter().flat_map(|s| s.edges().iter().copied()).collect();
    let pairs: Vec<_> = edges.iter().map(|e| (e.source, e.target)).collect();
    let predictions = model.predict(&pairs).unwrap();
    let correct = predictions
        .iter()
        .zip(&edges)
        .filter(|(p, e)| p.predicted_level == e.level)
        .count();
    correct as f64 / edges.len() as f64
}

pub fn toy_network_is_memorized() {
    assert_eq!(toy_training_accuracy(), 1.0);
}
