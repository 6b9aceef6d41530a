//! Seeded injection of collaborative bad-mouthing, good-mouthing and on-off
//! rating attacks into a snapshot sequence.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Label, NodeId, NodeLabel, Snapshot, TrustEdge};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    /// Distrust ratings aimed at good nodes.
    BadMouthing,
    /// Trust ratings aimed at bad nodes.
    GoodMouthing,
    /// Bad-mouthing in odd snapshots, honest ratings in even ones.
    OnOff,
}

impl std::str::FromStr for AttackKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bad" | "bad-mouthing" => Ok(Self::BadMouthing),
            "good" | "good-mouthing" => Ok(Self::GoodMouthing),
            "onoff" | "on-off" => Ok(Self::OnOff),
            other => Err(format!("unknown attack `{other}` (expected bad, good or onoff)")),
        }
    }
}

/// How many ratings each target receives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgesPerTarget {
    /// The target's total degree in the training snapshots (at least one).
    Degree,
    Fixed(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Share of good nodes targeted by bad-mouthing and on-off attacks;
    /// good-mouthing always targets every bad node.
    pub target_fraction: f64,
    pub edges_per_target: EdgesPerTarget,
    /// Number of designated attackers in an on-off attack.
    pub attacker_pool: usize,
    /// Attackers are new nodes; otherwise they are drawn from bad nodes.
    pub fresh_attackers: bool,
    /// Also inject into the training snapshots.
    pub poison_training: bool,
    pub seed: u64,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, seed: u64) -> Self {
        Self {
            kind,
            target_fraction: 0.1,
            edges_per_target: EdgesPerTarget::Degree,
            attacker_pool: 20,
            fresh_attackers: true,
            poison_training: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_fraction > 0.0 && self.target_fraction <= 1.0) {
            return Err(Error::config(format!(
                "target fraction {} outside (0, 1]",
                self.target_fraction
            )));
        }
        if self.edges_per_target == EdgesPerTarget::Fixed(0) {
            return Err(Error::config("each target needs at least one injected edge"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectedEdge {
    /// Position of the receiving snapshot in the attacked sequence.
    pub position: usize,
    pub edge: TrustEdge,
    pub malicious: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InjectionReport {
    pub injected: Vec<InjectedEdge>,
    /// Target -> number of edges it received.
    pub targets: BTreeMap<NodeId, usize>,
    pub attackers: Vec<NodeId>,
    /// Node count after adding fresh attackers.
    pub node_count: usize,
}

impl InjectionReport {
    /// Injected edges per sequence position.
    pub fn counts_per_position(&self, positions: usize) -> Vec<usize> {
        let mut c = vec![0; positions];
        for e in &self.injected {
            c[e.position] += 1;
        }
        c
    }

    pub fn malicious_per_position(&self, positions: usize) -> Vec<usize> {
        let mut c = vec![0; positions];
        for e in self.injected.iter().filter(|e| e.malicious) {
            c[e.position] += 1;
        }
        c
    }

    /// Delimited records `snapshot,source,target,level,flag`.
    pub fn write_csv<W: Write>(&self, snapshots: &[Snapshot], mut out: W) -> std::io::Result<()> {
        writeln!(out, "snapshot,source,target,level,flag")?;
        for e in &self.injected {
            writeln!(
                out,
                "{},{},{},{},{}",
                snapshots[e.position].index,
                e.edge.source,
                e.edge.target,
                e.edge.level,
                if e.malicious { "malicious" } else { "honest" }
            )?;
        }
        Ok(())
    }
}

/// Inputs shared by every attack.
#[derive(Clone, Copy, Debug)]
pub struct AttackContext<'a> {
    /// Node labels; nodes without a label are never targeted.
    pub labels: &'a [NodeLabel],
    /// Candidate targets (typically endpoints of the test edges).
    pub region: &'a [NodeId],
    /// Degree of each node in the training snapshots.
    pub degrees: &'a [usize],
    /// Current node count; fresh attackers receive ids from here on.
    pub node_count: usize,
    /// Number of trust levels; the top level is the trusting one.
    pub levels: usize,
}

impl AttackContext<'_> {
    fn label(&self, v: NodeId) -> Option<Label> {
        self.labels
            .binary_search_by_key(&v, |l| l.node)
            .ok()
            .map(|i| self.labels[i].label)
    }

    fn region_with(&self, label: Label) -> Vec<NodeId> {
        let mut nodes: Vec<NodeId> = self
            .region
            .iter()
            .copied()
            .filter(|&v| self.label(v) == Some(label))
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }

    fn edges_for(&self, spec: &AttackSpec, target: NodeId) -> usize {
        match spec.edges_per_target {
            EdgesPerTarget::Degree => self.degrees.get(target).copied().unwrap_or(0).max(1),
            EdgesPerTarget::Fixed(k) => k,
        }
    }
}

fn apply(snapshots: &[Snapshot], injected: &[InjectedEdge]) -> Vec<Snapshot> {
    let mut extra: Vec<Vec<TrustEdge>> = vec![Vec::new(); snapshots.len()];
    for e in injected {
        extra[e.position].push(e.edge);
    }
    snapshots
        .iter()
        .zip(extra)
        .map(|(s, x)| if x.is_empty() { s.clone() } else { s.with_extra_edges(&x) })
        .collect()
}

fn timestamp<R: Rng>(snapshot: &Snapshot, rng: &mut R) -> f64 {
    let (a, b) = snapshot.window;
    if b > a {
        rng.random_range(a..=b)
    } else {
        a
    }
}

/// Collaborative attack: every target receives `edges_for(target)` ratings
/// at `level`, each from a different attacker, spread uniformly over the
/// snapshots in `positions`.
fn collaborative(
    snapshots: &[Snapshot],
    positions: &[usize],
    targets: &[NodeId],
    level: usize,
    ctx: &AttackContext<'_>,
    spec: &AttackSpec,
    rng: &mut ChaCha8Rng,
) -> Result<InjectionReport> {
    let mut report = InjectionReport {
        node_count: ctx.node_count,
        ..InjectionReport::default()
    };
    let pool: Vec<NodeId> = if spec.fresh_attackers {
        Vec::new()
    } else {
        let bad = ctx
            .labels
            .iter()
            .filter(|l| l.label == Label::Bad)
            .map(|l| l.node)
            .collect::<Vec<_>>();
        if bad.is_empty() {
            return Err(Error::NothingToAttack("no bad nodes to act as attackers".into()));
        }
        bad
    };
    for &target in targets {
        let k = ctx.edges_for(spec, target);
        for _ in 0..k {
            let attacker = if spec.fresh_attackers {
                let id = report.node_count;
                report.node_count += 1;
                report.attackers.push(id);
                id
            } else {
                let mut a = *pool.choose(rng).expect("nonempty");
                if a == target {
                    a = pool[(pool.iter().position(|&p| p == a).unwrap() + 1) % pool.len()];
                }
                report.attackers.push(a);
                a
            };
            let position = positions[rng.random_range(0..positions.len())];
            let t = timestamp(&snapshots[position], rng);
            report.injected.push(InjectedEdge {
                position,
                edge: TrustEdge::new(attacker, target, level, t),
                malicious: true,
            });
        }
        report.targets.insert(target, k);
    }
    report.attackers.sort_unstable();
    report.attackers.dedup();
    Ok(report)
}

fn positions(snapshots: &[Snapshot], test_positions: &[usize], spec: &AttackSpec) -> Vec<usize> {
    if spec.poison_training {
        (0..snapshots.len()).collect()
    } else {
        test_positions.to_vec()
    }
}

/// Bad-mouthing: `ceil(target_fraction * |good nodes in region|)` good nodes
/// receive distrust ratings. `test_positions` are the positions of the test
/// snapshots inside `snapshots`.
pub fn inject_bad_mouthing(
    snapshots: &[Snapshot],
    test_positions: &[usize],
    ctx: &AttackContext<'_>,
    spec: &AttackSpec,
) -> Result<(Vec<Snapshot>, InjectionReport)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut good = ctx.region_with(Label::Good);
    if good.is_empty() {
        return Err(Error::NothingToAttack("no good nodes in the attacked region".into()));
    }
    let count = ((spec.target_fraction * good.len() as f64).ceil() as usize).min(good.len());
    good.shuffle(&mut rng);
    let mut targets = good[..count].to_vec();
    targets.sort_unstable();
    let pos = positions(snapshots, test_positions, spec);
    let report = collaborative(snapshots, &pos, &targets, 0, ctx, spec, &mut rng)?;
    Ok((apply(snapshots, &report.injected), report))
}

/// Good-mouthing: every bad node in the region receives top-level ratings.
pub fn inject_good_mouthing(
    snapshots: &[Snapshot],
    test_positions: &[usize],
    ctx: &AttackContext<'_>,
    spec: &AttackSpec,
) -> Result<(Vec<Snapshot>, InjectionReport)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let targets = ctx.region_with(Label::Bad);
    if targets.is_empty() {
        return Err(Error::NothingToAttack("no bad nodes in the attacked region".into()));
    }
    let pos = positions(snapshots, test_positions, spec);
    let report = collaborative(snapshots, &pos, &targets, ctx.levels - 1, ctx, spec, &mut rng)?;
    Ok((apply(snapshots, &report.injected), report))
}

/// On-off: a pool of attackers bad-mouths good targets in odd snapshots
/// (first, third, ...) and rates honestly in even ones, where honest means
/// the level matching the target's label.
pub fn inject_on_off(
    snapshots: &[Snapshot],
    ctx: &AttackContext<'_>,
    spec: &AttackSpec,
) -> Result<(Vec<Snapshot>, InjectionReport)> {
    spec.validate()?;
    if snapshots.len() < 2 {
        return Err(Error::config("an on-off attack needs at least two snapshots"));
    }
    let mut report = InjectionReport {
        node_count: ctx.node_count,
        ..InjectionReport::default()
    };
    if spec.attacker_pool == 0 {
        return Ok((snapshots.to_vec(), report));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut good = ctx.region_with(Label::Good);
    if good.is_empty() {
        return Err(Error::NothingToAttack("no good nodes in the attacked region".into()));
    }
    let count = ((spec.target_fraction * good.len() as f64).ceil() as usize).min(good.len());
    good.shuffle(&mut rng);
    let mut targets = good[..count].to_vec();
    targets.sort_unstable();
    let attackers: Vec<NodeId> = if spec.fresh_attackers {
        (ctx.node_count..ctx.node_count + spec.attacker_pool).collect()
    } else {
        let mut bad: Vec<NodeId> = ctx.labels.iter().filter(|l| l.label == Label::Bad).map(|l| l.node).collect();
        if bad.is_empty() {
            return Err(Error::NothingToAttack("no bad nodes to act as attackers".into()));
        }
        bad.shuffle(&mut rng);
        bad.truncate(spec.attacker_pool);
        bad
    };
    if spec.fresh_attackers {
        report.node_count += attackers.len();
    }
    let odd: Vec<usize> = (0..snapshots.len()).step_by(2).collect();
    let even: Vec<usize> = (1..snapshots.len()).step_by(2).collect();
    for &target in &targets {
        let k = ctx.edges_for(spec, target);
        for (phase, malicious) in [(&odd, true), (&even, false)] {
            for j in 0..k {
                let position = phase[j % phase.len()];
                let mut attacker = *attackers.choose(&mut rng).expect("nonempty pool");
                if attacker == target {
                    attacker = attackers[(attackers.iter().position(|&a| a == attacker).unwrap() + 1) % attackers.len()];
                    if attacker == target {
                        continue;
                    }
                }
                let level = if malicious { 0 } else { ctx.levels - 1 };
                let t = timestamp(&snapshots[position], &mut rng);
                report.injected.push(InjectedEdge {
                    position,
                    edge: TrustEdge::new(attacker, target, level, t),
                    malicious,
                });
            }
        }
        report.targets.insert(target, 2 * k);
    }
    report.attackers = attackers;
    report.attackers.sort_unstable();
    Ok((apply(snapshots, &report.injected), report))
}

/// Dispatches on `spec.kind`.
pub fn inject(
    snapshots: &[Snapshot],
    test_positions: &[usize],
    ctx: &AttackContext<'_>,
    spec: &AttackSpec,
) -> Result<(Vec<Snapshot>, InjectionReport)> {
    match spec.kind {
        AttackKind::BadMouthing => inject_bad_mouthing(snapshots, test_positions, ctx, spec),
        AttackKind::GoodMouthing => inject_good_mouthing(snapshots, test_positions, ctx, spec),
        AttackKind::OnOff => inject_on_off(snapshots, ctx, spec),
    }
}
