//! Worm containment and puzzle-based admission control for two-tier P2P
//! overlays.
//!
//! A small subset of well-provisioned overlay nodes (Phagocytes) watch the
//! behavior of the hosts they manage, isolate infected hosts, spread worm
//! alerts to neighboring Phagocytes, pull and distribute patches, and act as
//! gatekeepers for external hosts by handing out adaptive client puzzles.
//!
//! The crate is split the same way the system is:
//!
//! * [`topology`]: transit-stub underlay, two-tier overlay, trace files.
//! * [`behavior`]: behavior-sequence similarity used for worm detection.
//! * [`defense`]: per-Phagocyte detection, isolation, alerting and patching.
//! * [`gatekeeper`]: the three-message puzzle handshake, wire format and
//!   socket endpoints.
//! * [`engine`]: deterministic discrete-event simulation and metrics.

pub mod behavior;
pub mod defense;
pub mod engine;
pub mod gatekeeper;
pub mod topology;

/// Dense index of a node in an [`topology::OverlayGraph`].
pub type NodeId = u32;
