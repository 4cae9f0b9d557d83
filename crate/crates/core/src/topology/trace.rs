//! Line-oriented trace files.
//!
//! ```text
//! # comment
//! U <id>            Phagocyte (ultra-peer)
//! G <id>            legacy peer: Phagocyte tier, manages nobody
//! E <id> <id>       Phagocyte-tier link
//! L <id> <manager>  managed host (leaf-peer) and its manager
//! ```

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use super::overlay::RawNode;
use super::{HostId, OverlayGraph, Tier, TopologyError};
use crate::NodeId;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TraceFormat {
    #[default]
    Text,
}

impl FromStr for TraceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" | "txt" => Ok(TraceFormat::Text),
            other => Err(format!("unknown trace format `{other}`")),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Ultra,
    Legacy,
    Leaf,
}

struct Decl {
    kind: Kind,
    line: usize,
    manager: Option<u64>,
}

/// Reads a trace file. The result is cleaned: Phagocytes without tier links
/// are dropped together with the hosts that only they managed.
pub fn load_trace(path: impl AsRef<Path>, format: TraceFormat) -> Result<OverlayGraph, TopologyError> {
    let file = File::open(path)?;
    read_trace(BufReader::new(file), format)
}

pub fn read_trace<R: BufRead>(reader: R, format: TraceFormat) -> Result<OverlayGraph, TopologyError> {
    let TraceFormat::Text = format;
    let mut order: Vec<u64> = Vec::new();
    let mut decls: HashMap<u64, Decl> = HashMap::new();
    let mut edges: Vec<(u64, u64, usize)> = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut fields = content.split_whitespace();
        let tag = fields.next().expect("nonempty line");
        let mut id = |what: &str| -> Result<u64, TopologyError> {
            let raw = fields.next().ok_or_else(|| parse_err(line_no, format!("missing {what}")))?;
            raw.parse().map_err(|_| parse_err(line_no, format!("bad {what} `{raw}`")))
        };
        let (kind, node, manager) = match tag {
            "U" => (Kind::Ultra, id("node id")?, None),
            "G" => (Kind::Legacy, id("node id")?, None),
            "L" => {
                let node = id("node id")?;
                (Kind::Leaf, node, Some(id("manager id")?))
            }
            "E" => {
                let a = id("node id")?;
                let b = id("node id")?;
                if a == b {
                    return Err(parse_err(line_no, format!("self-loop on {a}")));
                }
                edges.push((a, b, line_no));
                continue;
            }
            other => return Err(parse_err(line_no, format!("unknown record `{other}`"))),
        };
        if fields.next().is_some() {
            return Err(parse_err(line_no, "trailing fields".into()));
        }
        match decls.entry(node) {
            Entry::Vacant(v) => {
                order.push(node);
                v.insert(Decl {
                    kind,
                    line: line_no,
                    manager,
                });
            }
            Entry::Occupied(o) => {
                let prev = o.get();
                if prev.kind != kind {
                    return Err(TopologyError::Invariant {
                        message: format!("node declared twice with different kinds (lines {} and {line_no})", prev.line),
                        ids: vec![node],
                    });
                }
                if prev.manager != manager {
                    let mut ids = vec![node];
                    ids.extend(prev.manager);
                    ids.extend(manager);
                    return Err(TopologyError::Invariant {
                        message: format!("managed host lists two managers (lines {} and {line_no})", prev.line),
                        ids,
                    });
                }
            }
        }
    }

    let index: HashMap<u64, NodeId> = order.iter().enumerate().map(|(i, &l)| (l, i as NodeId)).collect();
    let mut nodes = Vec::with_capacity(order.len());
    for (i, &label) in order.iter().enumerate() {
        let decl = &decls[&label];
        let uplinks = match decl.manager {
            None => Vec::new(),
            Some(m) => match decls.get(&m) {
                Some(d) if d.kind == Kind::Ultra => vec![index[&m]],
                Some(d) if d.kind == Kind::Legacy => {
                    return Err(TopologyError::Invariant {
                        message: format!("line {}: legacy peer cannot manage hosts", decl.line),
                        ids: vec![label, m],
                    })
                }
                _ => {
                    return Err(TopologyError::Invariant {
                        message: format!("line {}: manager is not a declared Phagocyte", decl.line),
                        ids: vec![label, m],
                    })
                }
            },
        };
        nodes.push(RawNode {
            label,
            host: i as HostId,
            tier: if decl.kind == Kind::Leaf { Tier::Managed } else { Tier::Phagocyte },
            legacy: decl.kind == Kind::Legacy,
            uplinks,
        });
    }
    let mut resolved = Vec::with_capacity(edges.len());
    for (a, b, line) in edges {
        let endpoint = |x: u64| match decls.get(&x) {
            Some(d) if d.kind != Kind::Leaf => Ok(index[&x]),
            _ => Err(TopologyError::Invariant {
                message: format!("line {line}: link endpoint is not a Phagocyte-tier node"),
                ids: vec![a, b],
            }),
        };
        resolved.push((endpoint(a)?, endpoint(b)?));
    }

    let graph = OverlayGraph::assemble(nodes, &resolved).clean();
    if graph.phagocyte_count() == 0 {
        return Err(TopologyError::EmptyTier(Tier::Phagocyte));
    }
    graph.validate()?;
    Ok(graph)
}

fn parse_err(line: usize, message: String) -> TopologyError {
    TopologyError::Parse { line, message }
}

/// Writes a graph in the text trace format, using node labels as ids.
pub fn write_trace(graph: &OverlayGraph, path: impl AsRef<Path>) -> Result<(), TopologyError> {
    let mut out = BufWriter::new(File::create(path)?);
    for n in graph.phagocytes() {
        let tag = if graph.is_legacy(n) { 'G' } else { 'U' };
        writeln!(out, "{tag} {}", graph.label(n))?;
    }
    for (a, b) in graph.tier_edges() {
        writeln!(out, "E {} {}", graph.label(a), graph.label(b))?;
    }
    for n in graph.managed() {
        let m = graph.manager(n).expect("managed host has a manager");
        writeln!(out, "L {} {}", graph.label(n), graph.label(m))?;
    }
    out.flush()?;
    Ok(())
}
