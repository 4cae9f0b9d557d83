use std::sync::OnceLock;

use petgraph::algo::dijkstra;
use petgraph::graph::{NodeIndex, UnGraph};
use petgraph::unionfind::UnionFind;
use petgraph::visit::EdgeRef;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TopologyError;

pub type RouterId = u32;
pub type HostId = u32;

/// Parameters of the hierarchical transit-stub router graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransitStubParams {
    pub transit_domains: u32,
    pub routers_per_transit: u32,
    /// Probability of a link between any two routers of one transit domain
    /// (also used between pairs of transit domains).
    pub transit_link_prob: f64,
    pub stubs_per_transit_router: u32,
    pub routers_per_stub: u32,
    pub stub_link_prob: f64,
    pub lan_delay_ms: f64,
    pub core_delay_ms: f64,
    /// Core link delays are drawn uniformly from
    /// `core_delay_ms * (1 ± core_delay_jitter)`; zero gives constant delays.
    pub core_delay_jitter: f64,
}

impl TransitStubParams {
    /// Testbed-sized topology: 10 transit domains of 10 routers, 10 stubs of
    /// 10 routers per transit router (about 10k routers).
    pub fn testbed() -> Self {
        Self {
            transit_domains: 10,
            routers_per_transit: 10,
            transit_link_prob: 0.5,
            stubs_per_transit_router: 10,
            routers_per_stub: 10,
            stub_link_prob: 0.1,
            lan_delay_ms: 5.0,
            core_delay_ms: 40.0,
            core_delay_jitter: 0.0,
        }
    }

    /// One transit domain and ten stubs in total: about 1/100 of the
    /// testbed's router count.
    pub fn desk() -> Self {
        Self {
            transit_domains: 1,
            stubs_per_transit_router: 1,
            ..Self::testbed()
        }
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        for (name, p) in [
            ("transit_link_prob", self.transit_link_prob),
            ("stub_link_prob", self.stub_link_prob),
            ("core_delay_jitter", self.core_delay_jitter),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(TopologyError::InvalidParameter {
                    name,
                    message: format!("{p} is outside [0, 1]"),
                });
            }
        }
        if self.transit_domains == 0 || self.routers_per_transit == 0 {
            return Err(TopologyError::InvalidParameter {
                name: "transit_domains",
                message: "at least one transit router is required".into(),
            });
        }
        if self.stubs_per_transit_router > 0 && self.routers_per_stub == 0 {
            return Err(TopologyError::InvalidParameter {
                name: "routers_per_stub",
                message: "stub domains need at least one router".into(),
            });
        }
        for (name, d) in [("lan_delay_ms", self.lan_delay_ms), ("core_delay_ms", self.core_delay_ms)] {
            if !(d.is_finite() && d >= 0.0) {
                return Err(TopologyError::InvalidParameter {
                    name,
                    message: format!("{d} is not a nonnegative delay"),
                });
            }
        }
        Ok(())
    }

    pub fn router_count(&self) -> usize {
        let transit = (self.transit_domains * self.routers_per_transit) as usize;
        transit + transit * (self.stubs_per_transit_router * self.routers_per_stub) as usize
    }
}

impl Default for TransitStubParams {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RouterTier {
    Transit { domain: u32 },
    Stub { domain: u32, gateway: RouterId },
}

/// Router graph with delays plus the LAN attachment of every end host.
///
/// Router-to-router distances are computed lazily, one Dijkstra row per
/// source router, so the graph can be shared read-only across threads.
#[derive(Debug)]
pub struct UnderlayGraph {
    graph: UnGraph<RouterTier, f64>,
    lan_delay_ms: f64,
    attachments: Vec<RouterId>,
    rows: Vec<OnceLock<Box<[f64]>>>,
}

impl UnderlayGraph {
    /// Builds an underlay from explicit links. Used for hand-made topologies.
    pub fn from_links(
        routers: usize,
        links: &[(RouterId, RouterId, f64)],
        lan_delay_ms: f64,
        attachments: Vec<RouterId>,
    ) -> Result<Self, TopologyError> {
        let mut graph = UnGraph::with_capacity(routers, links.len());
        for _ in 0..routers {
            graph.add_node(RouterTier::Transit { domain: 0 });
        }
        for &(a, b, d) in links {
            if a as usize >= routers || b as usize >= routers {
                return Err(TopologyError::InvalidParameter {
                    name: "links",
                    message: format!("link {a}-{b} references a missing router"),
                });
            }
            graph.add_edge(NodeIndex::new(a as usize), NodeIndex::new(b as usize), d);
        }
        if let Some(&r) = attachments.iter().find(|&&r| r as usize >= routers) {
            return Err(TopologyError::InvalidParameter {
                name: "attachments",
                message: format!("router {r} does not exist"),
            });
        }
        Ok(Self::assemble(graph, lan_delay_ms, attachments))
    }

    fn assemble(graph: UnGraph<RouterTier, f64>, lan_delay_ms: f64, attachments: Vec<RouterId>) -> Self {
        let rows = (0..graph.node_count()).map(|_| OnceLock::new()).collect();
        Self {
            graph,
            lan_delay_ms,
            attachments,
            rows,
        }
    }

    pub fn router_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn host_count(&self) -> usize {
        self.attachments.len()
    }

    pub fn lan_delay_ms(&self) -> f64 {
        self.lan_delay_ms
    }

    pub fn router_tier(&self, r: RouterId) -> RouterTier {
        self.graph[NodeIndex::new(r as usize)]
    }

    /// All router links as `(a, b, delay_ms)` with `a < b`.
    pub fn links(&self) -> impl Iterator<Item = (RouterId, RouterId, f64)> + '_ {
        self.graph.edge_references().map(|e| {
            let (a, b) = (e.source().index() as RouterId, e.target().index() as RouterId);
            (a.min(b), a.max(b), *e.weight())
        })
    }

    pub fn attachment(&self, host: HostId) -> Option<RouterId> {
        self.attachments.get(host as usize).copied()
    }

    /// Attaches `n` more hosts to uniformly random routers and returns their ids.
    pub fn attach_hosts<R: Rng>(&mut self, n: usize, rng: &mut R) -> std::ops::Range<HostId> {
        let start = self.attachments.len() as HostId;
        let routers = self.router_count() as RouterId;
        self.attachments.extend((0..n).map(|_| rng.gen_range(0..routers)));
        start..self.attachments.len() as HostId
    }

    pub fn is_connected(&self) -> bool {
        petgraph::algo::connected_components(&self.graph) <= 1
    }

    /// Shortest-path delay between two routers.
    pub fn router_distance(&self, a: RouterId, b: RouterId) -> f64 {
        if a == b {
            return 0.0;
        }
        self.row(a)[b as usize]
    }

    fn row(&self, src: RouterId) -> &[f64] {
        self.rows[src as usize].get_or_init(|| {
            let dist = dijkstra(&self.graph, NodeIndex::new(src as usize), None, |e| *e.weight());
            let mut row = vec![f64::INFINITY; self.router_count()].into_boxed_slice();
            for (node, d) in dist {
                row[node.index()] = d;
            }
            row
        })
    }

    /// Shortest-path delay in milliseconds between two attached hosts,
    /// including both LAN links. Zero for `a == b`.
    pub fn path_latency(&self, a: HostId, b: HostId) -> Result<f64, TopologyError> {
        let ra = self.attachment(a).ok_or(TopologyError::UnknownHost(a))?;
        let rb = self.attachment(b).ok_or(TopologyError::UnknownHost(b))?;
        if a == b {
            return Ok(0.0);
        }
        let core = self.router_distance(ra, rb);
        if !core.is_finite() {
            return Err(TopologyError::Unreachable(a, b));
        }
        Ok(2.0 * self.lan_delay_ms + core)
    }
}

/// Generates a transit-stub underlay and attaches `n_hosts` hosts to
/// uniformly chosen routers. Deterministic for a fixed seed.
pub fn synthesize_underlay(
    params: &TransitStubParams,
    n_hosts: usize,
    rng_seed: u64,
) -> Result<UnderlayGraph, TopologyError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let core_delay = |rng: &mut ChaCha8Rng| {
        if params.core_delay_jitter == 0.0 {
            params.core_delay_ms
        } else {
            let spread = params.core_delay_ms * params.core_delay_jitter;
            rng.gen_range(params.core_delay_ms - spread..=params.core_delay_ms + spread)
        }
    };

    let mut graph: UnGraph<RouterTier, f64> = UnGraph::with_capacity(params.router_count(), 0);
    let mut transit_domains: Vec<Vec<NodeIndex>> = Vec::new();
    for domain in 0..params.transit_domains {
        let routers: Vec<NodeIndex> = (0..params.routers_per_transit)
            .map(|_| graph.add_node(RouterTier::Transit { domain }))
            .collect();
        link_pairs(&mut graph, &routers, params.transit_link_prob, &mut rng, &core_delay);
        transit_domains.push(routers);
    }
    for i in 0..transit_domains.len() {
        for j in i + 1..transit_domains.len() {
            if rng.gen_bool(params.transit_link_prob) {
                let a = *transit_domains[i].choose(&mut rng).expect("nonempty domain");
                let b = *transit_domains[j].choose(&mut rng).expect("nonempty domain");
                let d = core_delay(&mut rng);
                graph.add_edge(a, b, d);
            }
        }
    }

    let transit_routers: Vec<NodeIndex> = transit_domains.iter().flatten().copied().collect();
    let mut stub_domain = 0;
    for &t in &transit_routers {
        for _ in 0..params.stubs_per_transit_router {
            let gateway = graph.node_count() as RouterId;
            let routers: Vec<NodeIndex> = (0..params.routers_per_stub)
                .map(|_| {
                    graph.add_node(RouterTier::Stub {
                        domain: stub_domain,
                        gateway,
                    })
                })
                .collect();
            link_pairs(&mut graph, &routers, params.stub_link_prob, &mut rng, &core_delay);
            let d = core_delay(&mut rng);
            graph.add_edge(routers[0], t, d);
            stub_domain += 1;
        }
    }

    let repair_delay = params.core_delay_ms * (1.0 - params.core_delay_jitter);
    repair_connectivity(&mut graph, repair_delay);

    let mut underlay = UnderlayGraph::assemble(graph, params.lan_delay_ms, Vec::new());
    underlay.attach_hosts(n_hosts, &mut rng);
    Ok(underlay)
}

fn link_pairs<F>(graph: &mut UnGraph<RouterTier, f64>, routers: &[NodeIndex], p: f64, rng: &mut ChaCha8Rng, delay: &F)
where
    F: Fn(&mut ChaCha8Rng) -> f64,
{
    for (i, &a) in routers.iter().enumerate() {
        for &b in &routers[i + 1..] {
            if rng.gen_bool(p) {
                let d = delay(rng);
                graph.add_edge(a, b, d);
            }
        }
    }
}

/// Links every component other than the largest one to the largest one with
/// a single minimum-delay link. A stub fragment attaches to its domain's
/// gateway router when the gateway is already in the main component.
fn repair_connectivity(graph: &mut UnGraph<RouterTier, f64>, delay: f64) {
    let n = graph.node_count();
    if n == 0 {
        return;
    }
    let mut uf = UnionFind::<usize>::new(n);
    for e in graph.edge_references() {
        uf.union(e.source().index(), e.target().index());
    }
    let labels = uf.into_labeling();
    let mut sizes = vec![0usize; n];
    for &l in &labels {
        sizes[l] += 1;
    }
    // Largest component; ties go to the one holding the lowest router id.
    let main = (0..n)
        .map(|r| labels[r])
        .max_by_key(|&l| (sizes[l], std::cmp::Reverse(first_member(&labels, l))))
        .expect("nonempty graph");

    let mut seen = vec![false; n];
    for r in 0..n {
        let comp = labels[r];
        if comp == main || seen[comp] {
            continue;
        }
        seen[comp] = true;
        // `r` is the lowest router id in this component.
        let anchor = match graph[NodeIndex::new(r)] {
            RouterTier::Stub { gateway, .. } if labels[gateway as usize] == main => gateway as usize,
            _ => first_member(&labels, main),
        };
        graph.add_edge(NodeIndex::new(r), NodeIndex::new(anchor), delay);
    }
}

fn first_member(labels: &[usize], comp: usize) -> usize {
    labels.iter().position(|&l| l == comp).expect("component has members")
}
