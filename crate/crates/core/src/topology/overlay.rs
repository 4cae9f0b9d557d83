use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::presets::{TraceSpec, TraceTier};
use super::{HostId, TopologyError, UnderlayGraph};
use crate::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Phagocyte,
    Managed,
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tier::Phagocyte => f.write_str("Phagocyte"),
            Tier::Managed => f.write_str("managed"),
        }
    }
}

/// Two-tier overlay: a mesh of Phagocytes, each managing a zone of hosts.
///
/// Nodes are addressed by dense [`NodeId`]s. Every node also carries the
/// label it had in its trace and the underlay host it is attached to; both
/// survive [`OverlayGraph::retain`].
///
/// A managed host may hold connections to several Phagocytes (its
/// uplinks, ordered by preference); the first one is its manager. Only the
/// manager relationship is visible to the defense. Keeping the others lets
/// trace derivations re-home hosts whose manager was removed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OverlayGraph {
    labels: Vec<u64>,
    hosts: Vec<HostId>,
    tiers: Vec<Tier>,
    legacy: Vec<bool>,
    tier_adj: Vec<Vec<NodeId>>,
    uplinks: Vec<Vec<NodeId>>,
    zones: Vec<Vec<NodeId>>,
}

/// Raw node used while assembling a graph.
#[derive(Clone, Debug)]
pub(crate) struct RawNode {
    pub label: u64,
    pub host: HostId,
    pub tier: Tier,
    pub legacy: bool,
    pub uplinks: Vec<NodeId>,
}

impl OverlayGraph {
    /// Assembles a graph from raw nodes and Phagocyte-tier edges. Edges and
    /// uplinks are given in node indices. The result is not cleaned.
    pub(crate) fn assemble(nodes: Vec<RawNode>, edges: &[(NodeId, NodeId)]) -> Self {
        let n = nodes.len();
        let mut tier_adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            tier_adj[a as usize].push(b);
            tier_adj[b as usize].push(a);
        }
        for adj in &mut tier_adj {
            adj.sort_unstable();
            adj.dedup();
        }
        let mut zones = vec![Vec::new(); n];
        let mut labels = Vec::with_capacity(n);
        let mut hosts = Vec::with_capacity(n);
        let mut tiers = Vec::with_capacity(n);
        let mut legacy = Vec::with_capacity(n);
        let mut uplinks = Vec::with_capacity(n);
        for (i, node) in nodes.into_iter().enumerate() {
            if let Some(&m) = node.uplinks.first() {
                zones[m as usize].push(i as NodeId);
            }
            labels.push(node.label);
            hosts.push(node.host);
            tiers.push(node.tier);
            legacy.push(node.legacy);
            uplinks.push(node.uplinks);
        }
        Self {
            labels,
            hosts,
            tiers,
            legacy,
            tier_adj,
            uplinks,
            zones,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        0..self.len() as NodeId
    }

    pub fn tier(&self, n: NodeId) -> Tier {
        self.tiers[n as usize]
    }

    pub fn is_phagocyte(&self, n: NodeId) -> bool {
        self.tiers[n as usize] == Tier::Phagocyte
    }

    pub fn is_legacy(&self, n: NodeId) -> bool {
        self.legacy[n as usize]
    }

    pub fn label(&self, n: NodeId) -> u64 {
        self.labels[n as usize]
    }

    pub fn host(&self, n: NodeId) -> HostId {
        self.hosts[n as usize]
    }

    pub fn phagocytes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes().filter(|&n| self.is_phagocyte(n))
    }

    pub fn managed(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes().filter(|&n| !self.is_phagocyte(n))
    }

    pub fn phagocyte_count(&self) -> usize {
        self.tiers.iter().filter(|&&t| t == Tier::Phagocyte).count()
    }

    pub fn managed_count(&self) -> usize {
        self.len() - self.phagocyte_count()
    }

    /// Phagocyte-tier neighbors (empty for managed hosts).
    pub fn tier_neighbors(&self, n: NodeId) -> &[NodeId] {
        &self.tier_adj[n as usize]
    }

    /// Phagocyte-tier edges with `a < b`.
    pub fn tier_edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.nodes()
            .flat_map(move |a| self.tier_adj[a as usize].iter().filter(move |&&b| a < b).map(move |&b| (a, b)))
    }

    pub fn manager(&self, n: NodeId) -> Option<NodeId> {
        match self.tier(n) {
            Tier::Managed => self.uplinks[n as usize].first().copied(),
            Tier::Phagocyte => None,
        }
    }

    /// Phagocytes this host is connected to, manager first.
    pub fn uplinks(&self, n: NodeId) -> &[NodeId] {
        &self.uplinks[n as usize]
    }

    /// Hosts managed by a Phagocyte.
    pub fn zone(&self, ph: NodeId) -> &[NodeId] {
        &self.zones[ph as usize]
    }

    /// Phagocyte count over managed-host count.
    pub fn managed_ratio(&self) -> f64 {
        self.phagocyte_count() as f64 / self.managed_count() as f64
    }

    /// Phagocyte count over all hosts.
    pub fn population_ratio(&self) -> f64 {
        self.phagocyte_count() as f64 / self.len() as f64
    }

    /// Checks the structural invariants and reports the first violation.
    pub fn validate(&self) -> Result<(), TopologyError> {
        for n in self.nodes() {
            match self.tier(n) {
                Tier::Phagocyte => {
                    if self.tier_adj[n as usize].is_empty() {
                        return Err(invariant("isolated Phagocyte", [self.label(n)]));
                    }
                    if self.is_legacy(n) && !self.zone(n).is_empty() {
                        return Err(invariant("legacy peer manages hosts", [self.label(n)]));
                    }
                }
                Tier::Managed => {
                    let Some(m) = self.manager(n) else {
                        return Err(invariant("managed host without a manager", [self.label(n)]));
                    };
                    if !self.is_phagocyte(m) || self.is_legacy(m) {
                        return Err(invariant("manager is not a Phagocyte", [self.label(n), self.label(m)]));
                    }
                    if !self.tier_adj[n as usize].is_empty() {
                        return Err(invariant("managed host in the Phagocyte mesh", [self.label(n)]));
                    }
                }
            }
        }
        Ok(())
    }

    /// Keeps the nodes for which `keep` holds. Edges and uplinks towards
    /// removed nodes disappear; ids are compacted in order.
    pub fn retain(&self, keep: impl Fn(NodeId) -> bool) -> OverlayGraph {
        let mut remap = vec![NodeId::MAX; self.len()];
        let mut next = 0;
        for n in self.nodes() {
            if keep(n) {
                remap[n as usize] = next;
                next += 1;
            }
        }
        let nodes = self
            .nodes()
            .filter(|&n| remap[n as usize] != NodeId::MAX)
            .map(|n| RawNode {
                label: self.label(n),
                host: self.host(n),
                tier: self.tier(n),
                legacy: self.is_legacy(n),
                uplinks: self.uplinks[n as usize]
                    .iter()
                    .map(|&u| remap[u as usize])
                    .filter(|&u| u != NodeId::MAX)
                    .collect(),
            })
            .collect();
        let edges: Vec<_> = self
            .tier_edges()
            .map(|(a, b)| (remap[a as usize], remap[b as usize]))
            .filter(|&(a, b)| a != NodeId::MAX && b != NodeId::MAX)
            .collect();
        OverlayGraph::assemble(nodes, &edges)
    }

    /// Removes Phagocytes without Phagocyte-tier links, then managed hosts
    /// left without any Phagocyte. Hosts whose manager disappeared move to
    /// their next uplink. Idempotent.
    pub fn clean(&self) -> OverlayGraph {
        let without_isolated = self.retain(|n| !self.is_phagocyte(n) || !self.tier_adj[n as usize].is_empty());
        without_isolated.retain(|n| without_isolated.is_phagocyte(n) || !without_isolated.uplinks[n as usize].is_empty())
    }

    /// Removes exactly `round(fraction * count)` uniformly chosen nodes of
    /// one tier, then cleans.
    pub fn remove_fraction<R: Rng>(&self, tier: TraceTier, fraction: f64, rng: &mut R) -> OverlayGraph {
        let tier = match tier {
            TraceTier::Phagocytes => Tier::Phagocyte,
            TraceTier::Managed => Tier::Managed,
        };
        let candidates: Vec<NodeId> = self.nodes().filter(|&n| self.tier(n) == tier).collect();
        let amount = ((fraction.clamp(0.0, 1.0) * candidates.len() as f64).round() as usize).min(candidates.len());
        let mut drop = vec![false; self.len()];
        for i in sample(rng, candidates.len(), amount) {
            drop[candidates[i] as usize] = true;
        }
        self.retain(|n| !drop[n as usize]).clean()
    }
}

fn invariant<const N: usize>(message: &str, ids: [u64; N]) -> TopologyError {
    TopologyError::Invariant {
        message: message.to_string(),
        ids: ids.to_vec(),
    }
}

/// Knobs of the synthetic overlay that trace counts alone do not fix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverlayShape {
    /// Links each Phagocyte opens to other Phagocytes (mean degree is twice this).
    pub tier_links: u32,
    /// Each link goes to the closest of this many random candidates.
    pub proximity_candidates: u32,
    /// Phagocytes every managed host connects to.
    pub uplinks: u32,
    /// Probability of one extra uplink.
    pub extra_uplink_prob: f64,
    /// Fraction of the Phagocyte tier made of legacy peers.
    pub legacy_fraction: f64,
}

impl Default for OverlayShape {
    fn default() -> Self {
        Self {
            tier_links: 4,
            proximity_candidates: 3,
            uplinks: 3,
            extra_uplink_prob: 0.2,
            legacy_fraction: 0.0,
        }
    }
}

/// Builds a synthetic overlay over `underlay`, whose hosts `0..n` are used
/// in order (Phagocytes first). Deterministic for a fixed seed.
///
/// Each managed host picks random uplinks and is managed by the closest one
/// (underlay latency, ties to the lowest id). The spec's removal steps are
/// applied afterwards, each followed by cleaning.
pub fn synthesize_overlay(
    spec: &TraceSpec,
    underlay: &UnderlayGraph,
    rng_seed: u64,
) -> Result<OverlayGraph, TopologyError> {
    spec.validate()?;
    let shape = &spec.shape;
    let n_ph = spec.n_phagocytes;
    let total = n_ph + spec.n_managed;
    if underlay.host_count() < total {
        return Err(TopologyError::NotEnoughHosts {
            attached: underlay.host_count(),
            needed: total,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let router = |n: usize| underlay.attachment(n as HostId).expect("attached host");
    let distance = |a: usize, b: usize| underlay.router_distance(router(a), router(b));

    let mut nodes: Vec<RawNode> = (0..n_ph)
        .map(|i| RawNode {
            label: i as u64,
            host: i as HostId,
            tier: Tier::Phagocyte,
            legacy: shape.legacy_fraction > 0.0 && rng.gen_bool(shape.legacy_fraction),
            uplinks: Vec::new(),
        })
        .collect();
    let mut hosting: Vec<NodeId> = (0..n_ph as NodeId).filter(|&p| !nodes[p as usize].legacy).collect();
    if hosting.is_empty() {
        // Someone has to accept managed hosts.
        nodes[0].legacy = false;
        hosting.push(0);
    }

    let mut adj: Vec<Vec<NodeId>> = vec![Vec::new(); n_ph];
    let mut edges = Vec::new();
    if n_ph > 1 {
        let slots = (shape.tier_links as usize).min(n_ph - 1);
        let candidates = shape.proximity_candidates.max(1) as usize;
        for a in 0..n_ph {
            for _ in 0..slots {
                let mut best: Option<(f64, usize)> = None;
                for _ in 0..candidates {
                    let b = rng.gen_range(0..n_ph);
                    if b == a || adj[a].contains(&(b as NodeId)) {
                        continue;
                    }
                    let d = distance(a, b);
                    if best.map_or(true, |(bd, bb)| (d, b) < (bd, bb)) {
                        best = Some((d, b));
                    }
                }
                if let Some((_, b)) = best {
                    adj[a].push(b as NodeId);
                    adj[b].push(a as NodeId);
                    edges.push((a as NodeId, b as NodeId));
                }
            }
        }
    }

    for m in 0..spec.n_managed {
        let node = n_ph + m;
        let want = shape.uplinks.max(1) as usize + usize::from(rng.gen_bool(shape.extra_uplink_prob));
        let want = want.min(hosting.len());
        let mut ups: Vec<NodeId> = sample(&mut rng, hosting.len(), want).into_iter().map(|i| hosting[i]).collect();
        ups.sort_by(|&a, &b| distance(node, a as usize).total_cmp(&distance(node, b as usize)).then(a.cmp(&b)));
        nodes.push(RawNode {
            label: node as u64,
            host: node as HostId,
            tier: Tier::Managed,
            legacy: false,
            uplinks: ups,
        });
    }

    let mut graph = OverlayGraph::assemble(nodes, &edges).clean();
    for step in &spec.removal_steps {
        graph = graph.remove_fraction(step.tier, step.fraction, &mut rng);
    }
    if graph.phagocyte_count() == 0 {
        return Err(TopologyError::EmptyTier(Tier::Phagocyte));
    }
    if graph.managed_count() == 0 {
        return Err(TopologyError::EmptyTier(Tier::Managed));
    }
    Ok(graph)
}
