use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{DynamicGraph, GraphError, Snapshot, TrustEdge};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Segmentation {
    /// Equal-width time windows.
    #[default]
    Time,
    /// Equal edge counts per snapshot.
    Event,
}

impl std::str::FromStr for Segmentation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "time" => Ok(Self::Time),
            "event" => Ok(Self::Event),
            other => Err(format!("unknown segmentation `{other}` (expected time or event)")),
        }
    }
}

pub fn segment(graph: &DynamicGraph, n: usize, how: Segmentation) -> Result<Vec<Snapshot>, GraphError> {
    match how {
        Segmentation::Time => segment_time_driven(graph, n),
        Segmentation::Event => segment_event_driven(graph, n),
    }
}

fn check(graph: &DynamicGraph, n: usize) -> Result<(f64, f64), GraphError> {
    if n == 0 {
        return Err(GraphError::Config("snapshot count must be positive".into()));
    }
    graph.time_span().ok_or(GraphError::Empty)
}

/// Splits `[t_min, t_max]` into `n` windows of equal width. An edge with
/// timestamp `ts` goes to window `floor((ts - t_min) / width)`, with the
/// maximum timestamp clamped into the last window.
pub fn segment_time_driven(graph: &DynamicGraph, n: usize) -> Result<Vec<Snapshot>, GraphError> {
    let (t_min, t_max) = check(graph, n)?;
    let mut distinct = graph.edges().iter().map(|e| e.timestamp.to_bits()).collect::<Vec<_>>();
    distinct.dedup();
    if distinct.len() < n {
        warn!(
            "{n} snapshots requested but only {} distinct timestamps; some snapshots will be empty",
            distinct.len()
        );
    }
    let width = (t_max - t_min) / n as f64;
    let mut buckets: Vec<Vec<TrustEdge>> = vec![Vec::new(); n];
    for e in graph.edges() {
        let idx = if width > 0.0 {
            (((e.timestamp - t_min) / width).floor() as usize).min(n - 1)
        } else {
            0
        };
        buckets[idx].push(*e);
    }
    Ok(buckets
        .into_iter()
        .enumerate()
        .map(|(i, edges)| {
            let start = t_min + width * i as f64;
            let end = if i + 1 == n { t_max } else { t_min + width * (i + 1) as f64 };
            Snapshot::new(i, (start, end), edges)
        })
        .collect())
}

/// Splits the time-ordered edges into `n` consecutive chunks whose sizes
/// differ by at most one; earlier chunks receive the extra edges.
pub fn segment_event_driven(graph: &DynamicGraph, n: usize) -> Result<Vec<Snapshot>, GraphError> {
    check(graph, n)?;
    let edges = graph.edges();
    if edges.len() < n {
        warn!("{n} snapshots requested for {} edges; some snapshots will be empty", edges.len());
    }
    let base = edges.len() / n;
    let extra = edges.len() % n;
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    let mut last_ts = edges[0].timestamp;
    for i in 0..n {
        let size = base + usize::from(i < extra);
        let chunk = edges[start..start + size].to_vec();
        let window = match (chunk.first(), chunk.last()) {
            (Some(a), Some(b)) => (a.timestamp, b.timestamp),
            _ => (last_ts, last_ts),
        };
        last_ts = window.1;
        out.push(Snapshot::new(i, window, chunk));
        start += size;
    }
    Ok(out)
}

/// CSV with one row per snapshot: index, window, node and edge counts.
pub fn write_snapshot_manifest<W: Write>(snapshots: &[Snapshot], mut out: W) -> std::io::Result<()> {
    writeln!(out, "index,start,end,nodes,edges")?;
    for s in snapshots {
        writeln!(
            out,
            "{},{},{},{},{}",
            s.index,
            s.window.0,
            s.window.1,
            s.nodes().len(),
            s.edges().len()
        )?;
    }
    Ok(())
}
