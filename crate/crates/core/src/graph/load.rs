use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{DynamicGraph, GraphError, TrustEdge, TrustLevelScheme};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadOptions {
    pub allow_self_loops: bool,
}

/// Reads a `source,target,rating,timestamp` edge list from disk.
pub fn load_edge_list(path: impl AsRef<Path>, scheme: &TrustLevelScheme) -> Result<DynamicGraph, GraphError> {
    let file = File::open(path)?;
    parse_edge_list(BufReader::new(file), scheme, LoadOptions::default())
}

/// Parses an edge list. Blank lines and lines starting with `#` are skipped.
/// Raw node ids are remapped to `0..n` in ascending raw-id order.
pub fn parse_edge_list<R: BufRead>(
    reader: R,
    scheme: &TrustLevelScheme,
    options: LoadOptions,
) -> Result<DynamicGraph, GraphError> {
    let mut raw = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(GraphError::Parse {
                line: line_no,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let parse_id = |s: &str, what: &str| {
            s.parse::<i64>().map_err(|e| GraphError::Parse {
                line: line_no,
                message: format!("bad {what} `{s}`: {e}"),
            })
        };
        let parse_num = |s: &str, what: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| GraphError::Parse {
                    line: line_no,
                    message: format!("bad {what} `{s}`"),
                })
        };
        let source = parse_id(fields[0], "source")?;
        let target = parse_id(fields[1], "target")?;
        let rating = parse_num(fields[2], "rating")?;
        let timestamp = parse_num(fields[3], "timestamp")?;
        if source == target && !options.allow_self_loops {
            return Err(GraphError::SelfLoop {
                line: line_no,
                node: source,
            });
        }
        let level = scheme
            .map_rating(rating)
            .ok_or(GraphError::Mapping { line: line_no, rating })?;
        raw.push((source, target, level, timestamp));
    }

    let mut ids: BTreeMap<i64, usize> = BTreeMap::new();
    for &(s, t, _, _) in &raw {
        ids.insert(s, 0);
        ids.insert(t, 0);
    }
    for (dense, slot) in ids.values_mut().enumerate() {
        *slot = dense;
    }
    let raw_ids: Vec<i64> = ids.keys().copied().collect();
    let edges = raw
        .into_iter()
        .map(|(s, t, level, ts)| TrustEdge::new(ids[&s], ids[&t], level, ts))
        .collect();
    Ok(DynamicGraph::new(scheme.clone(), edges, raw_ids.len())?.with_raw_ids(raw_ids))
}

/// Writes edges in the same format `parse_edge_list` reads, using the raw
/// ids of `graph` and a representative rating per level.
pub fn write_edge_list<W: Write>(graph: &DynamicGraph, mut out: W) -> std::io::Result<()> {
    for e in graph.edges() {
        writeln!(
            out,
            "{},{},{},{}",
            graph.raw_id(e.source),
            graph.raw_id(e.target),
            graph.scheme().rating_for(e.level),
            e.timestamp
        )?;
    }
    Ok(())
}
