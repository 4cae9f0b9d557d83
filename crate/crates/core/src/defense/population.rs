use std::collections::BTreeSet;

use super::{Health, PatchEvent, Role};
use crate::behavior::{BehaviorPair, BehaviorSequence};
use crate::topology::{OverlayGraph, Tier};
use crate::NodeId;

/// Defense-relevant state of one node.
#[derive(Clone, Debug)]
pub struct NodeState {
    role: Role,
    health: Health,
    manager: Option<NodeId>,
    links_active: BTreeSet<NodeId>,
    saved_links: BTreeSet<NodeId>,
    quarantined: bool,
    has_patch: bool,
    window: BehaviorSequence,
    window_version: u64,
    connections: u32,
}

impl NodeState {
    fn new(role: Role, manager: Option<NodeId>, window: usize) -> Self {
        Self {
            role,
            health: Health::Vulnerable,
            manager,
            links_active: BTreeSet::new(),
            saved_links: BTreeSet::new(),
            quarantined: false,
            has_patch: false,
            window: BehaviorSequence::new(window),
            window_version: 0,
            connections: 0,
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn health(&self) -> Health {
        self.health
    }

    pub fn manager(&self) -> Option<NodeId> {
        self.manager
    }

    pub fn links_active(&self) -> &BTreeSet<NodeId> {
        &self.links_active
    }

    /// Links cut by isolation and waiting for a patch.
    pub fn saved_links(&self) -> &BTreeSet<NodeId> {
        &self.saved_links
    }

    /// Cut off by a Phagocyte and not yet patched.
    pub fn is_quarantined(&self) -> bool {
        self.quarantined
    }

    pub fn has_patch(&self) -> bool {
        self.has_patch
    }

    pub fn window(&self) -> &BehaviorSequence {
        &self.window
    }

    /// Bumped on every change to the window.
    pub fn window_version(&self) -> u64 {
        self.window_version
    }

    /// Connections opened since the last [`Population::reset_connection_counts`].
    pub fn connections(&self) -> u32 {
        self.connections
    }
}

/// All nodes and the overlay links between them.
#[derive(Clone, Debug)]
pub struct Population {
    nodes: Vec<NodeState>,
    zones: Vec<Vec<NodeId>>,
    neighbors: Vec<Vec<NodeId>>,
}

impl Population {
    /// Mirrors an overlay: Phagocyte-tier links, each managed host's link to
    /// its manager, and (optionally) links between hosts sharing a manager.
    /// Every node starts vulnerable with an empty window.
    pub fn from_overlay(g: &OverlayGraph, window: usize, sibling_links: bool) -> Self {
        let mut nodes: Vec<NodeState> = g
            .nodes()
            .map(|n| match g.tier(n) {
                Tier::Phagocyte => NodeState::new(Role::Phagocyte, None, window),
                Tier::Managed => NodeState::new(Role::Managed, g.manager(n), window),
            })
            .collect();
        let mut link = |a: NodeId, b: NodeId| {
            nodes[a as usize].links_active.insert(b);
            nodes[b as usize].links_active.insert(a);
        };
        for (a, b) in g.tier_edges() {
            link(a, b);
        }
        for ph in g.phagocytes() {
            let zone = g.zone(ph);
            for (i, &h) in zone.iter().enumerate() {
                link(h, ph);
                if sibling_links {
                    for &s in &zone[i + 1..] {
                        link(h, s);
                    }
                }
            }
        }
        Self {
            nodes,
            zones: g.nodes().map(|n| g.zone(n).to_vec()).collect(),
            neighbors: g.nodes().map(|n| g.tier_neighbors(n).to_vec()).collect(),
        }
    }

    /// Adds a node outside the overlay. It has no links.
    pub fn add_external(&mut self, window: usize) -> NodeId {
        self.nodes.push(NodeState::new(Role::External, None, window));
        self.zones.push(Vec::new());
        self.neighbors.push(Vec::new());
        (self.nodes.len() - 1) as NodeId
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, n: NodeId) -> &NodeState {
        &self.nodes[n as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &NodeState)> {
        self.nodes.iter().enumerate().map(|(i, s)| (i as NodeId, s))
    }

    /// Hosts managed by `ph`, whether or not their link is currently active.
    pub fn zone(&self, ph: NodeId) -> &[NodeId] {
        &self.zones[ph as usize]
    }

    /// Phagocyte-tier neighbors in the overlay, whether or not their link is
    /// currently active.
    pub fn tier_neighbors(&self, ph: NodeId) -> &[NodeId] {
        &self.neighbors[ph as usize]
    }

    pub fn is_linked(&self, a: NodeId, b: NodeId) -> bool {
        self.nodes[a as usize].links_active.contains(&b)
    }

    /// Sets the starting health. Only meant for seeding an outbreak.
    pub fn set_initial_health(&mut self, n: NodeId, health: Health) {
        assert!(
            matches!(health, Health::Immune | Health::Vulnerable | Health::Infected),
            "initial health must be immune, vulnerable or infected"
        );
        self.nodes[n as usize].health = health;
    }

    /// An infection attempt that reached `n`. Returns whether it took hold.
    pub fn infect(&mut self, n: NodeId) -> bool {
        let s = &mut self.nodes[n as usize];
        if s.health.is_susceptible() {
            s.health = Health::Infected;
            true
        } else {
            false
        }
    }

    /// Appends a request to a node's window.
    pub fn record(&mut self, n: NodeId, pair: BehaviorPair) {
        let s = &mut self.nodes[n as usize];
        s.window.push(pair);
        s.window_version += 1;
    }

    /// Replaces a node's window, e.g. once a patch has cleaned the host.
    pub fn reset_window(&mut self, n: NodeId, pairs: impl IntoIterator<Item = BehaviorPair>) {
        let s = &mut self.nodes[n as usize];
        s.window = BehaviorSequence::from_pairs(s.window.capacity(), pairs);
        s.window_version += 1;
    }

    pub fn count_connection(&mut self, n: NodeId) {
        self.nodes[n as usize].connections += 1;
    }

    pub fn reset_connection_counts(&mut self) {
        for s in &mut self.nodes {
            s.connections = 0;
        }
    }

    pub fn health_counts(&self) -> [usize; 5] {
        let mut c = [0; 5];
        for s in &self.nodes {
            c[s.health as usize] += 1;
        }
        c
    }

    fn unlink(&mut self, a: NodeId, b: NodeId) {
        self.nodes[a as usize].links_active.remove(&b);
        self.nodes[b as usize].links_active.remove(&a);
    }

    fn link(&mut self, a: NodeId, b: NodeId) {
        self.nodes[a as usize].links_active.insert(b);
        self.nodes[b as usize].links_active.insert(a);
    }
}

/// What [`isolate`] did.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IsolationOutcome {
    /// Links cut, as `(flagged node, peer)`.
    pub cut: Vec<(NodeId, NodeId)>,
    /// Newly quarantined nodes.
    pub isolated: Vec<NodeId>,
    /// Flagged Phagocytes; each was asked to fetch an urgent patch.
    pub urgent: Vec<NodeId>,
}

/// Cuts every active link of each flagged node and remembers the cut links
/// so a patch can restore them. Infected nodes become isolated; a flagged
/// node that was not infected keeps its health but is cut off all the same.
/// Nodes already quarantined are left alone.
pub fn isolate(pop: &mut Population, flagged: &[NodeId]) -> IsolationOutcome {
    let mut out = IsolationOutcome::default();
    let mut order = flagged.to_vec();
    order.sort_unstable();
    order.dedup();
    for f in order {
        if pop.nodes[f as usize].quarantined {
            continue;
        }
        let peers: Vec<NodeId> = pop.nodes[f as usize].links_active.iter().copied().collect();
        for g in peers {
            pop.unlink(f, g);
            pop.nodes[f as usize].saved_links.insert(g);
            out.cut.push((f, g));
        }
        let s = &mut pop.nodes[f as usize];
        s.quarantined = true;
        if s.health == Health::Infected {
            s.health = Health::Isolated;
        }
        out.isolated.push(f);
        if s.role == Role::Phagocyte {
            out.urgent.push(f);
        }
    }
    out
}

/// What [`apply_patch`] did.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PatchOutcome {
    pub health_before: Option<Health>,
    /// Links brought back, as `(patched node, peer)`.
    pub restored: Vec<(NodeId, NodeId)>,
    /// Hosts the patched Phagocyte now forwards the patch to.
    pub distribute: Vec<NodeId>,
}

/// Installs a patch. Susceptible or compromised nodes become patched; a
/// quarantined node gets its cut links back, except towards peers that are
/// themselves still quarantined (those come back when the peer is patched).
/// A Phagocyte receiving its first patch forwards it to its zone.
pub fn apply_patch(pop: &mut Population, n: NodeId, _ev: &PatchEvent) -> PatchOutcome {
    let mut out = PatchOutcome::default();
    let s = &mut pop.nodes[n as usize];
    if s.health.can_become(Health::Patched) {
        out.health_before = Some(s.health);
        s.health = Health::Patched;
    }
    let first = !s.has_patch;
    s.has_patch = true;
    if s.quarantined {
        s.quarantined = false;
        let saved = std::mem::take(&mut s.saved_links);
        for g in saved {
            if pop.nodes[g as usize].quarantined {
                pop.nodes[g as usize].saved_links.insert(n);
            } else {
                pop.link(n, g);
                out.restored.push((n, g));
            }
        }
    }
    if first && pop.nodes[n as usize].role == Role::Phagocyte {
        out.distribute = pop.zones[n as usize].clone();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::PatchKind;
    use super::*;
    use crate::topology::read_trace;
    use crate::topology::TraceFormat;

    /// Phagocytes 1..=4 in a ring with a chord 1-3, managed 5 and 6 under 1.
    fn world() -> (OverlayGraph, Population) {
        let g = read_trace("U 1\nU 2\nU 3\nU 4\nE 1 2\nE 2 3\nE 3 4\nE 4 1\nE 1 3\nL 5 1\nL 6 1\n".as_bytes(), TraceFormat::Text).unwrap();
        let pop = Population::from_overlay(&g, 10, true);
        (g, pop)
    }

    fn id(g: &OverlayGraph, label: u64) -> NodeId {
        g.nodes().find(|&n| g.label(n) == label).unwrap()
    }

    fn patch() -> PatchEvent {
        PatchEvent {
            kind: PatchKind::Urgent,
            source: 0,
            arrival: 0,
        }
    }

    #[test]
    fn links_mirror_overlay() {
        let (g, pop) = world();
        let five = id(&g, 5);
        let six = id(&g, 6);
        let one = id(&g, 1);
        assert_eq!(pop.node(five).links_active(), &BTreeSet::from([one, six]));
        assert_eq!(pop.node(one).links_active().len(), 5);
        assert_eq!(pop.zone(one), &[five, six]);
    }

    #[test]
    fn isolating_a_managed_host() {
        let (g, mut pop) = world();
        let five = id(&g, 5);
        pop.infect(five);
        let out = isolate(&mut pop, &[five]);
        assert!(pop.node(five).links_active().is_empty());
        assert_eq!(pop.node(five).health(), Health::Isolated);
        assert_eq!(out.cut.len(), 2);
        assert!(out.urgent.is_empty());
        assert_eq!(isolate(&mut pop, &[five]), IsolationOutcome::default());
    }

    #[test]
    fn isolate_then_patch_restores_phagocyte_links() {
        let (g, mut pop) = world();
        let two = id(&g, 2);
        let four = id(&g, 4);
        pop.infect(four);
        let out = isolate(&mut pop, &[four]);
        // 4 touches 1 and 3 in the ring only
        assert_eq!(out.cut.len(), 2);
        assert_eq!(out.urgent, vec![four]);
        assert_eq!(pop.node(four).saved_links().len(), 2);
        let before: Vec<_> = pop.iter().map(|(_, s)| s.links_active().clone()).collect();

        let three = id(&g, 3);
        pop.infect(three);
        let three_links = pop.node(three).links_active().len();
        isolate(&mut pop, &[three]);
        assert_eq!(pop.node(three).saved_links().len(), three_links);

        let p = apply_patch(&mut pop, four, &patch());
        assert_eq!(p.health_before, Some(Health::Isolated));
        assert_eq!(pop.node(four).health(), Health::Patched);
        // the link to 3 waits until 3 is patched
        assert_eq!(p.restored.len(), 1);
        assert!(pop.node(three).saved_links().contains(&four));
        apply_patch(&mut pop, three, &patch());
        assert!(pop.is_linked(three, four));
        assert!(pop.is_linked(two, three));
        for (n, s) in pop.iter() {
            if n != three && n != four {
                assert!(before[n as usize].iter().all(|x| s.links_active().contains(x) || *x == three));
            }
        }
        assert!(pop.iter().all(|(_, s)| s.saved_links().is_empty() && !s.is_quarantined()));
    }

    #[test]
    fn patch_effects_by_health() {
        let (g, mut pop) = world();
        let five = id(&g, 5);
        let six = id(&g, 6);
        let one = id(&g, 1);
        apply_patch(&mut pop, five, &patch());
        assert!(!pop.infect(five));
        pop.set_initial_health(six, Health::Immune);
        let out = apply_patch(&mut pop, six, &patch());
        assert_eq!(out, PatchOutcome::default());
        assert_eq!(pop.node(six).health(), Health::Immune);
        let first = apply_patch(&mut pop, one, &patch());
        assert_eq!(first.distribute, vec![five, six]);
        assert!(apply_patch(&mut pop, one, &patch()).distribute.is_empty());
    }
}
