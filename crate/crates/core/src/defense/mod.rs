//! Per-node defense state: detection over behavior windows, local
//! isolation, threshold alert propagation, patching and egress filtering.
//!
//! The engine owns a [`Population`] and drives these operations from its
//! event loop; everything here is synchronous and deterministic.

mod alert;
mod detect;
mod population;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::NodeId;

pub use alert::{should_broadcast, AlertState};
pub use detect::{detect_managed, detect_neighbors, SimilarityCache};
pub use population::{apply_patch, isolate, IsolationOutcome, PatchOutcome, Population};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Phagocyte,
    Managed,
    External,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Health {
    Immune,
    Vulnerable,
    Infected,
    Isolated,
    Patched,
}

impl Health {
    pub const ALL: [Health; 5] = [
        Health::Immune,
        Health::Vulnerable,
        Health::Infected,
        Health::Isolated,
        Health::Patched,
    ];

    /// Allowed moves of the epidemic state machine.
    pub fn can_become(self, next: Health) -> bool {
        use Health::*;
        matches!(
            (self, next),
            (Vulnerable, Infected) | (Vulnerable, Patched) | (Infected, Isolated) | (Infected, Patched) | (Isolated, Patched)
        )
    }

    /// Whether an infection attempt on a node in this state can succeed.
    pub fn is_susceptible(self) -> bool {
        self == Health::Vulnerable
    }

    /// Infected, whether or not the node has been cut off yet.
    pub fn is_compromised(self) -> bool {
        matches!(self, Health::Infected | Health::Isolated)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchKind {
    Periodical,
    Urgent,
}

/// A patch reaching a node. `source` is the maintainer it came from,
/// `arrival` the simulated time in microseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchEvent {
    pub kind: PatchKind,
    pub source: NodeId,
    pub arrival: u64,
}

/// Alert sent between Phagocytes. `hop_set` lists Phagocytes already known
/// to have broadcast for the same worm.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WormAlert {
    pub origin: NodeId,
    pub hop_set: BTreeSet<NodeId>,
    pub timestamp: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficKind {
    /// Overlay protocol traffic: queries, connects, transfers.
    P2p,
    /// Anything else, such as a patch pulled over HTTP.
    Other,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Egress {
    Allow,
    /// Denied; the named Phagocyte treats it as a worm event.
    Deny { responsible: NodeId },
}

/// Blocks P2P traffic leaving the overlay. `responsible` is the Phagocyte
/// accountable for `src` (itself, or its manager).
pub fn filter_egress(src_role: Role, dst_role: Role, kind: TrafficKind, responsible: NodeId) -> Egress {
    if src_role != Role::External && dst_role == Role::External && kind == TrafficKind::P2p {
        Egress::Deny { responsible }
    } else {
        Egress::Allow
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefenseParams {
    pub theta_d: f64,
    pub theta_a: f64,
    /// Connections one host may open per detection tick.
    pub rate_limit: u32,
    /// Zones larger than this are clustered by sampling.
    pub sample_above: usize,
    /// Peers each host is compared with when sampling.
    pub sample_peers: usize,
    /// Share of Phagocytes acting as patch maintainers.
    pub maintainer_fraction: f64,
    /// Ticks between periodical patch pushes.
    pub periodic_interval_ticks: u64,
}

impl Default for DefenseParams {
    fn default() -> Self {
        Self {
            theta_d: crate::behavior::DEFAULT_THETA_D,
            theta_a: 0.5,
            rate_limit: 50,
            sample_above: 200,
            sample_peers: 32,
            maintainer_fraction: 0.01,
            periodic_interval_ticks: 1000,
        }
    }
}

impl DefenseParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("theta_d", self.theta_d), ("theta_a", self.theta_a), ("maintainer_fraction", self.maintainer_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} = {v} is outside [0, 1]"));
            }
        }
        if self.sample_peers == 0 {
            return Err("sample_peers must be positive".into());
        }
        if self.periodic_interval_ticks == 0 {
            return Err("periodic_interval_ticks must be positive".into());
        }
        Ok(())
    }

    /// Number of maintainers for a Phagocyte tier of `n` nodes.
    pub fn maintainer_count(&self, n: usize) -> usize {
        ((self.maintainer_fraction * n as f64).round() as usize).clamp(1, n.max(1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_machine_edges() {
        use Health::*;
        let allowed: Vec<(Health, Health)> = Health::ALL
            .iter()
            .flat_map(|&a| Health::ALL.iter().map(move |&b| (a, b)))
            .filter(|&(a, b)| a.can_become(b))
            .collect();
        assert_eq!(
            allowed,
            vec![
                (Vulnerable, Infected),
                (Vulnerable, Patched),
                (Infected, Isolated),
                (Infected, Patched),
                (Isolated, Patched)
            ]
        );
        assert!(!Immune.can_become(Infected));
        assert!(!Patched.can_become(Infected));
    }

    #[test]
    fn egress_examples() {
        use Role::*;
        assert_eq!(filter_egress(Managed, External, TrafficKind::P2p, 7), Egress::Deny { responsible: 7 });
        assert_eq!(filter_egress(Managed, Managed, TrafficKind::P2p, 7), Egress::Allow);
        assert_eq!(filter_egress(Phagocyte, External, TrafficKind::Other, 7), Egress::Allow);
        assert_eq!(filter_egress(External, Managed, TrafficKind::P2p, 7), Egress::Allow);
    }

    #[test]
    fn maintainer_counts() {
        let p = DefenseParams::default();
        assert_eq!(p.maintainer_count(10_000), 100);
        assert_eq!(p.maintainer_count(3180), 32);
        assert_eq!(p.maintainer_count(20), 1);
    }
}
