//! The simulated world: a routed underlay with per-link delays and the
//! two-tier overlay deployed on top of it.

mod overlay;
mod presets;
mod trace;
mod underlay;

pub use overlay::{synthesize_overlay, OverlayGraph, OverlayShape, Tier};
pub use presets::{RemovalStep, TracePreset, TraceSpec, TraceTier};
pub use trace::{load_trace, read_trace, write_trace, TraceFormat};
pub use underlay::{synthesize_underlay, HostId, RouterId, RouterTier, TransitStubParams, UnderlayGraph};

use crate::NodeId;

#[derive(Debug, thiserror::Error)]
pub enum TopologyError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace invariant violated: {message} (ids: {ids:?})")]
    Invariant { message: String, ids: Vec<u64> },
    #[error("{0} tier is empty")]
    EmptyTier(Tier),
    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },
    #[error("host {0} is not attached to the underlay")]
    UnknownHost(HostId),
    #[error("hosts {0} and {1} are not connected in the underlay")]
    Unreachable(HostId, HostId),
    #[error("underlay has {attached} attached hosts, overlay needs {needed}")]
    NotEnoughHosts { attached: usize, needed: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Latency in milliseconds between two overlay nodes, through the underlay.
pub fn node_latency(
    underlay: &UnderlayGraph,
    overlay: &OverlayGraph,
    a: NodeId,
    b: NodeId,
) -> Result<f64, TopologyError> {
    underlay.path_latency(overlay.host(a), overlay.host(b))
}
