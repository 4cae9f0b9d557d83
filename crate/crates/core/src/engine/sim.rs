use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, VecDeque};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::event::{ms_to_us, EventKind, EventQueue, Payload, SimEvent};
use super::metrics::{MetricSeries, Sample};
use super::{seed_outbreak, EngineError, InitialState, RunConfig, World};
use crate::behavior::{BehaviorPair, Operation};
use crate::defense::{
    apply_patch, detect_managed, detect_neighbors, filter_egress, isolate, AlertState, Egress, Health, PatchEvent, PatchKind,
    Population, Role, SimilarityCache, TrafficKind,
};
use crate::topology::HostId;
use crate::NodeId;

const WORM_PAYLOAD: &[u8] = b"GET /X0-W0RM-PAYLOAD_0DAY.EXE";
const DYNAMICS_STREAM: u64 = 0x6479_6e61_6d69_6373;
const BENIGN_STREAM: u64 = 0x6265_6e69_676e_0000;
const QUERY_DRAWS: usize = 8;

/// Benign requests a node made before the run. Lowercase payloads only, so
/// they share nothing with the worm's payload.
fn benign_pairs(seed: u64, n: NodeId, count: usize) -> Vec<BehaviorPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ BENIGN_STREAM ^ (n as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    (0..count)
        .map(|_| {
            let op = Operation::ALL[rng.gen_range(0..Operation::ALL.len())];
            let len = rng.gen_range(8..=24);
            let payload: Vec<u8> = (0..len).map(|_| b'a' + rng.gen_range(0..26u8)).collect();
            BehaviorPair::new(op, payload).expect("short payload")
        })
        .collect()
}

/// One run of the internal-defense model.
pub struct Simulation<'w> {
    world: &'w World,
    cfg: RunConfig,
    pop: Population,
    queue: EventQueue,
    rng: ChaCha8Rng,
    now_us: u64,
    tick_us: u64,
    max_time_us: u64,
    ticks: u64,
    n_overlay: usize,
    external_hosts: Vec<HostId>,
    worm_pair: BehaviorPair,
    pending: Vec<VecDeque<NodeId>>,
    waves: Vec<VecDeque<NodeId>>,
    active: BTreeSet<NodeId>,
    alert_states: Vec<AlertState>,
    patch_requested: Vec<bool>,
    dirty: BTreeSet<NodeId>,
    cache: SimilarityCache,
    maintainers: Vec<NodeId>,
    nearest_maintainer: Vec<Option<(NodeId, f64)>>,
    overlay_arrival: Option<Vec<(NodeId, NodeId, f64)>>,
    query_pool: Vec<NodeId>,
    counts: [usize; 5],
    susceptible_managed: usize,
    alerts_sent: u64,
    leaked: u64,
    metrics: MetricSeries,
}

impl<'w> Simulation<'w> {
    /// Seeds the outbreak from the config and prepares the first tick.
    pub fn new(world: &'w World, cfg: RunConfig) -> Result<Self, EngineError> {
        cfg.validate()?;
        let initial = seed_outbreak(&world.overlay, cfg.immune_ph_pct, cfg.immune_host_pct, cfg.initial_infect_pct, cfg.seed)?;
        Self::with_initial(world, cfg, initial)
    }

    /// Starts from an explicit initial state; the percentages in `cfg` are
    /// ignored.
    pub fn with_initial(world: &'w World, cfg: RunConfig, initial: InitialState) -> Result<Self, EngineError> {
        cfg.validate()?;
        let g = &world.overlay;
        let n_overlay = g.len();
        if initial.health.len() != n_overlay {
            return Err(EngineError::Infeasible(format!(
                "initial state covers {} nodes, overlay has {n_overlay}",
                initial.health.len()
            )));
        }
        let available = world.external_hosts().len();
        if cfg.sim.external_hosts > available {
            return Err(EngineError::InvalidParameter {
                name: "external_hosts",
                message: format!("{} requested, the underlay has {available} spare hosts", cfg.sim.external_hosts),
            });
        }
        let mut pop = Population::from_overlay(g, cfg.sim.window, true);
        initial.apply(&mut pop);
        let external_hosts: Vec<HostId> = world.external_hosts().take(cfg.sim.external_hosts).collect();
        for _ in &external_hosts {
            pop.add_external(cfg.sim.window);
        }
        for n in g.nodes() {
            pop.reset_window(n, benign_pairs(cfg.seed, n, cfg.sim.benign_history));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DYNAMICS_STREAM);
        let maintainers = if cfg.defense_enabled {
            let mut immune: Vec<NodeId> = g.phagocytes().filter(|&n| initial.health[n as usize] == Health::Immune).collect();
            let mut others: Vec<NodeId> = g.phagocytes().filter(|&n| initial.health[n as usize] != Health::Immune).collect();
            let want = cfg.defense.maintainer_count(g.phagocyte_count());
            let mut picked = pick(&mut immune, want, &mut rng);
            let rest = want - picked.len();
            picked.extend(pick(&mut others, rest, &mut rng));
            picked.sort_unstable();
            picked
        } else {
            Vec::new()
        };

        let total = pop.len();
        let mut query_pool: Vec<NodeId> = g.managed().collect();
        query_pool.extend(n_overlay as NodeId..total as NodeId);
        let tick_us = ms_to_us(cfg.sim.tick_ms).max(1);
        let max_time_us = ms_to_us(cfg.sim.max_time_s * 1000.0);
        let mut sim = Self {
            world,
            pop,
            queue: EventQueue::new(),
            rng,
            now_us: 0,
            tick_us,
            max_time_us,
            ticks: 0,
            n_overlay,
            external_hosts,
            worm_pair: BehaviorPair::new(Operation::Query, WORM_PAYLOAD).expect("short payload"),
            pending: vec![VecDeque::new(); total],
            waves: vec![VecDeque::new(); total],
            active: BTreeSet::new(),
            alert_states: (0..total).map(|_| AlertState::new(cfg.defense.theta_a)).collect(),
            patch_requested: vec![false; total],
            dirty: BTreeSet::new(),
            cache: SimilarityCache::new(cfg.defense.theta_d),
            maintainers,
            nearest_maintainer: vec![None; total],
            overlay_arrival: None,
            query_pool,
            counts: [0; 5],
            susceptible_managed: 0,
            alerts_sent: 0,
            leaked: 0,
            metrics: MetricSeries::default(),
            cfg,
        };
        for n in 0..n_overlay as NodeId {
            let h = sim.pop.node(n).health();
            sim.counts[h as usize] += 1;
            if h == Health::Vulnerable && sim.pop.node(n).role() == Role::Managed {
                sim.susceptible_managed += 1;
            }
            if h == Health::Infected {
                sim.start_worm(n);
            }
        }
        sim.metrics.total_nodes = n_overlay;
        sim.metrics.initial_infected = sim.counts[Health::Infected as usize];
        sim.metrics.initial_vulnerable = sim.metrics.initial_infected + sim.counts[Health::Vulnerable as usize];
        sim.queue.push(SimEvent::new(0, EventKind::DetectionTick, 0, 0));
        Ok(sim)
    }

    pub fn population(&self) -> &Population {
        &self.pop
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn now_ms(&self) -> f64 {
        self.now_us as f64 / 1000.0
    }

    pub fn queue(&self) -> &EventQueue {
        &self.queue
    }

    pub fn metrics(&self) -> &MetricSeries {
        &self.metrics
    }

    pub fn maintainers(&self) -> &[NodeId] {
        &self.maintainers
    }

    /// Infected nodes that are still connected and spreading.
    pub fn active_infected(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.active.iter().copied()
    }

    /// Health counts over overlay nodes, indexed by `Health as usize`.
    pub fn health_counts(&self) -> [usize; 5] {
        self.counts
    }

    /// P2P messages that reached an external host.
    pub fn leaked(&self) -> u64 {
        self.leaked
    }

    fn role(&self, n: NodeId) -> Role {
        self.pop.node(n).role()
    }

    fn host(&self, n: NodeId) -> HostId {
        if (n as usize) < self.n_overlay {
            self.world.overlay.host(n)
        } else {
            self.external_hosts[n as usize - self.n_overlay]
        }
    }

    fn latency_ms(&self, a: NodeId, b: NodeId) -> Option<f64> {
        self.world.underlay.path_latency(self.host(a), self.host(b)).ok()
    }

    fn push_after(&mut self, delay_ms: f64, ev: SimEvent) {
        let ev = SimEvent {
            time_us: self.now_us + ms_to_us(delay_ms),
            ..ev
        };
        self.queue.push(ev);
    }

    fn set_health_count(&mut self, from: Health, to: Health) {
        self.counts[from as usize] -= 1;
        self.counts[to as usize] += 1;
    }

    /// Queues the targets a newly infected node goes after, in order.
    fn start_worm(&mut self, n: NodeId) {
        let targets: VecDeque<NodeId> = match self.role(n) {
            Role::Managed => {
                let manager = self.pop.node(n).manager().expect("managed host has a manager");
                self.pop.zone(manager).iter().copied().filter(|&s| s != n).chain([manager]).collect()
            }
            Role::Phagocyte => self.pop.zone(n).iter().chain(self.pop.tier_neighbors(n)).copied().collect(),
            Role::External => VecDeque::new(),
        };
        self.pending[n as usize] = targets;
        self.active.insert(n);
    }

    fn mark_dirty(&mut self, n: NodeId) {
        match self.role(n) {
            Role::Managed => {
                if let Some(m) = self.pop.node(n).manager() {
                    self.dirty.insert(m);
                }
            }
            Role::Phagocyte => {
                self.dirty.insert(n);
                let neighbors = self.pop.tier_neighbors(n).to_vec();
                self.dirty.extend(neighbors);
            }
            Role::External => {}
        }
    }

    fn query_victim(&mut self, src: NodeId) -> Option<NodeId> {
        let own = self.pop.node(src).manager();
        for _ in 0..QUERY_DRAWS {
            let v = self.query_pool[self.rng.gen_range(0..self.query_pool.len())];
            if v != src && (self.role(v) == Role::External || self.pop.node(v).manager() != own) {
                return Some(v);
            }
        }
        None
    }

    /// One worm attempt from `src`. Attempts that cannot change anything
    /// (target already infected, immune, patched or cut off) are recorded
    /// in the sender's window but never scheduled.
    fn attempt(&mut self, src: NodeId, dst: NodeId, over_link: bool) {
        self.pop.record(src, self.worm_pair.clone());
        self.pop.count_connection(src);
        self.mark_dirty(src);
        if self.role(dst) == Role::External {
            if self.cfg.defense_enabled {
                let responsible = self.pop.node(src).manager().unwrap_or(src);
                if let Egress::Deny { responsible } = filter_egress(self.role(src), Role::External, TrafficKind::P2p, responsible) {
                    self.metrics.leaks_blocked += 1;
                    self.worm_event(responsible, &[src]);
                    return;
                }
            }
        } else {
            if over_link && !self.pop.is_linked(src, dst) {
                return;
            }
            let target = self.pop.node(dst);
            if target.is_quarantined() || target.health() != Health::Vulnerable {
                return;
            }
        }
        if let Some(lat) = self.latency_ms(src, dst) {
            self.push_after(lat, SimEvent::new(0, EventKind::InfectionAttempt, src, dst));
        }
    }

    /// Next victim of the current key-query wave, starting a new wave of
    /// `query_fanout` victims when the last one is used up.
    fn next_query_victim(&mut self, n: NodeId) -> Option<NodeId> {
        if self.waves[n as usize].is_empty() {
            for _ in 0..self.cfg.worm.query_fanout {
                if let Some(v) = self.query_victim(n) {
                    self.waves[n as usize].push_back(v);
                }
            }
        }
        self.waves[n as usize].pop_front()
    }

    /// Every connected infected node spends its per-tick attempts. A managed
    /// host works all its vectors at once, alternating between the nodes it
    /// knows (siblings, then its manager) and victims of key queries. A
    /// Phagocyte goes through its zone, then its neighboring Phagocytes.
    pub fn worm_step(&mut self) {
        let budget = self.cfg.worm.infection_attempts_per_tick;
        let nodes: Vec<NodeId> = self.active.iter().copied().collect();
        for n in nodes {
            let managed = self.role(n) == Role::Managed;
            let mut direct = true;
            for _ in 0..budget {
                if !self.active.contains(&n) {
                    break;
                }
                let known = if direct || !managed { self.pending[n as usize].pop_front() } else { None };
                match known {
                    Some(t) => self.attempt(n, t, true),
                    None if managed => match self.next_query_victim(n) {
                        Some(v) => self.attempt(n, v, false),
                        None => match self.pending[n as usize].pop_front() {
                            Some(t) => self.attempt(n, t, true),
                            None => break,
                        },
                    },
                    None => break,
                }
                direct = !direct;
            }
        }
    }

    fn detect(&mut self) {
        let dirty = std::mem::take(&mut self.dirty);
        for p in dirty {
            if self.role(p) != Role::Phagocyte || self.pop.node(p).is_quarantined() {
                continue;
            }
            let mut flagged = detect_managed(&self.pop, p, &self.cfg.defense, &mut self.cache, &mut self.rng);
            flagged.extend(detect_neighbors(&self.pop, p, &self.cfg.defense, &mut self.cache, &mut self.rng));
            if !flagged.is_empty() {
                flagged.sort_unstable();
                flagged.dedup();
                self.worm_event(p, &flagged);
            }
        }
    }

    /// Phagocyte `p` saw a worm: isolate, alert, and fetch a patch.
    fn worm_event(&mut self, p: NodeId, flagged: &[NodeId]) {
        self.metrics.detections += 1;
        let out = isolate(&mut self.pop, flagged);
        for &n in &out.isolated {
            if self.active.remove(&n) {
                self.set_health_count(Health::Infected, Health::Isolated);
            }
            self.mark_dirty(n);
        }
        for &f in &out.urgent {
            if f != p {
                let hop = self.latency_ms(p, f).unwrap_or(0.0);
                self.request_urgent(f, hop);
            }
        }
        let neighbors = self.pop.tier_neighbors(p).to_vec();
        if let Some(targets) = self.alert_states[p as usize].on_detection(&neighbors) {
            self.send_alerts(p, &targets);
        }
        self.request_urgent(p, 0.0);
    }

    fn send_alerts(&mut self, from: NodeId, targets: &[NodeId]) {
        for &t in targets {
            if let Some(lat) = self.latency_ms(from, t) {
                self.alerts_sent += 1;
                self.push_after(lat, SimEvent::new(0, EventKind::AlertDelivery, from, t));
            }
        }
    }

    fn nearest_maintainer(&mut self, ph: NodeId) -> Option<(NodeId, f64)> {
        if let Some(hit) = self.nearest_maintainer[ph as usize] {
            return Some(hit);
        }
        let best = self
            .maintainers
            .iter()
            .filter_map(|&m| self.latency_ms(ph, m).map(|d| (m, d)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))?;
        self.nearest_maintainer[ph as usize] = Some(best);
        Some(best)
    }

    /// Pulls a patch straight from the closest maintainer, once.
    fn request_urgent(&mut self, ph: NodeId, extra_ms: f64) {
        if self.patch_requested[ph as usize] || self.pop.node(ph).has_patch() {
            return;
        }
        let Some((m, d)) = self.nearest_maintainer(ph) else { return };
        self.patch_requested[ph as usize] = true;
        self.push_after(
            extra_ms + d,
            SimEvent::new(0, EventKind::PatchDelivery, m, ph).with_payload(Payload::Patch(PatchKind::Urgent)),
        );
    }

    /// Arrival delay of a periodical push at every Phagocyte, along
    /// Phagocyte-tier links from the closest maintainer. Phagocytes the
    /// tier cannot reach get it directly.
    fn overlay_arrivals(&mut self) -> Vec<(NodeId, NodeId, f64)> {
        if let Some(a) = &self.overlay_arrival {
            return a.clone();
        }
        let n = self.n_overlay;
        let mut dist: Vec<Option<(u64, NodeId)>> = vec![None; n];
        let mut heap = BinaryHeap::new();
        for &m in &self.maintainers {
            dist[m as usize] = Some((0, m));
            heap.push(Reverse((0u64, m, m)));
        }
        while let Some(Reverse((d, v, src))) = heap.pop() {
            if dist[v as usize].is_some_and(|(best, _)| best < d) {
                continue;
            }
            for &w in self.pop.tier_neighbors(v) {
                let Some(lat) = self.latency_ms(v, w) else { continue };
                let nd = d + ms_to_us(lat);
                if dist[w as usize].map_or(true, |(best, _)| nd < best) {
                    dist[w as usize] = Some((nd, src));
                    heap.push(Reverse((nd, w, src)));
                }
            }
        }
        let phagocytes: Vec<NodeId> = self.world.overlay.phagocytes().collect();
        let arrivals: Vec<(NodeId, NodeId, f64)> = phagocytes
            .into_iter()
            .filter_map(|p| match dist[p as usize] {
                Some((d, src)) => Some((p, src, d as f64 / 1000.0)),
                None => self.nearest_maintainer(p).map(|(m, d)| (p, m, d)),
            })
            .collect();
        self.overlay_arrival = Some(arrivals.clone());
        arrivals
    }

    fn periodic_push(&mut self) {
        for (p, src, d) in self.overlay_arrivals() {
            self.push_after(
                d,
                SimEvent::new(0, EventKind::PatchDelivery, src, p).with_payload(Payload::Patch(PatchKind::Periodical)),
            );
        }
    }

    fn on_tick(&mut self) {
        self.worm_step();
        if self.cfg.defense_enabled {
            self.detect();
            if self.ticks > 0 && self.ticks % self.cfg.defense.periodic_interval_ticks == 0 {
                self.periodic_push();
            }
        }
        self.pop.reset_connection_counts();
        self.ticks += 1;
        self.queue.push(SimEvent::new(self.now_us, EventKind::MetricSample, 0, 0));
        let next = self.now_us + self.tick_us;
        if !self.quiescent() && next <= self.max_time_us {
            self.queue.push(SimEvent::new(next, EventKind::DetectionTick, 0, 0));
        }
    }

    /// Nothing the worm does from here on can infect anyone.
    fn quiescent(&self) -> bool {
        if self.queue.pending(EventKind::InfectionAttempt) > 0 {
            return false;
        }
        !self.active.iter().any(|&n| {
            (self.role(n) == Role::Managed && self.susceptible_managed > 0)
                || self.pending[n as usize].iter().any(|&t| {
                    let s = self.pop.node(t);
                    s.health() == Health::Vulnerable && !s.is_quarantined() && self.pop.is_linked(n, t)
                })
        })
    }

    fn on_infection_attempt(&mut self, ev: &SimEvent) {
        let dst = ev.dst;
        if self.role(dst) == Role::External {
            assert!(!self.cfg.defense_enabled, "P2P traffic from {} reached external node {dst}", ev.src);
            self.leaked += 1;
            return;
        }
        if self.pop.node(dst).is_quarantined() {
            return;
        }
        let p = self.cfg.worm.infection_success_prob;
        if p < 1.0 && !self.rng.gen_bool(p) {
            return;
        }
        if self.pop.infect(dst) {
            self.set_health_count(Health::Vulnerable, Health::Infected);
            if self.role(dst) == Role::Managed {
                self.susceptible_managed -= 1;
            }
            self.start_worm(dst);
        }
    }

    fn on_alert(&mut self, ev: &SimEvent) {
        let dst = ev.dst;
        if self.pop.node(dst).is_quarantined() {
            return;
        }
        let neighbors = self.pop.tier_neighbors(dst).to_vec();
        if let Some(targets) = self.alert_states[dst as usize].on_alert(ev.src, &neighbors) {
            self.send_alerts(dst, &targets);
        }
        self.request_urgent(dst, 0.0);
    }

    fn on_patch(&mut self, ev: &SimEvent, kind: PatchKind) {
        let n = ev.dst;
        let was_quarantined = self.pop.node(n).is_quarantined();
        let patch = PatchEvent {
            kind,
            source: ev.src,
            arrival: ev.time_us,
        };
        let out = apply_patch(&mut self.pop, n, &patch);
        if let Some(before) = out.health_before {
            self.set_health_count(before, Health::Patched);
            match before {
                Health::Vulnerable if self.role(n) == Role::Managed => self.susceptible_managed -= 1,
                Health::Infected | Health::Isolated => {
                    self.active.remove(&n);
                    let clean = benign_pairs(self.cfg.seed, n, self.cfg.sim.benign_history);
                    self.pop.reset_window(n, clean);
                }
                _ => {}
            }
        }
        if was_quarantined || out.health_before.is_some() {
            self.mark_dirty(n);
        }
        for h in out.distribute {
            if let Some(lat) = self.latency_ms(n, h) {
                self.push_after(lat, SimEvent::new(0, EventKind::PatchDelivery, n, h).with_payload(Payload::Patch(kind)));
            }
        }
    }

    fn sample(&mut self) {
        let c = self.counts;
        self.metrics.push(Sample {
            time_ms: self.now_ms(),
            infected: c[Health::Infected as usize],
            isolated: c[Health::Isolated as usize],
            patched: c[Health::Patched as usize],
            alerts: self.alerts_sent,
        });
    }

    /// Processes the next event. Returns it, or `None` once the queue is
    /// empty or a budget ran out.
    pub fn step(&mut self) -> Option<SimEvent> {
        if self.metrics.events >= self.cfg.sim.max_events {
            return None;
        }
        let t = self.queue.peek_time_us()?;
        if t > self.max_time_us {
            return None;
        }
        let ev = self.queue.pop()?;
        self.now_us = ev.time_us;
        self.metrics.events += 1;
        match ev.kind {
            EventKind::DetectionTick => self.on_tick(),
            EventKind::InfectionAttempt => self.on_infection_attempt(&ev),
            EventKind::AlertDelivery => self.on_alert(&ev),
            EventKind::PatchDelivery => {
                let kind = match ev.payload {
                    Payload::Patch(k) => k,
                    _ => PatchKind::Urgent,
                };
                self.on_patch(&ev, kind);
            }
            EventKind::MetricSample => self.sample(),
            EventKind::HandshakeStep | EventKind::ExternalAttack => {}
        }
        Some(ev)
    }

    /// Runs until the queue drains or a budget is hit.
    pub fn run(mut self) -> MetricSeries {
        while self.step().is_some() {}
        if self.metrics.infected_over_time.last().map_or(true, |s| s.time_ms < self.now_ms()) {
            self.sample();
        }
        self.metrics.end_time_ms = self.now_ms();
        self.metrics
    }
}

fn pick(from: &mut Vec<NodeId>, want: usize, rng: &mut ChaCha8Rng) -> Vec<NodeId> {
    let k = want.min(from.len());
    sample(rng, from.len(), k).into_iter().map(|i| from[i]).collect()
}

/// Seeds an outbreak on `world` and runs it to the end.
pub fn run_experiment(world: &World, cfg: &RunConfig) -> Result<MetricSeries, EngineError> {
    Ok(Simulation::new(world, cfg.clone())?.run())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{SimParams, WormParams};
    use crate::topology::{TraceSpec, TransitStubParams};

    fn world(n_ph: usize, n_managed: usize, externals: usize, seed: u64) -> World {
        World::synthesize(&TraceSpec::new(n_ph, n_managed), &TransitStubParams::desk(), externals, seed).unwrap()
    }

    fn config(defense: bool, seed: u64) -> RunConfig {
        RunConfig {
            immune_ph_pct: 50.0,
            immune_host_pct: 10.0,
            initial_infect_pct: 1.0,
            defense_enabled: defense,
            seed,
            ..RunConfig::default()
        }
    }

    fn all_immune_but(w: &World, infected: NodeId) -> InitialState {
        let mut health = vec![Health::Immune; w.overlay.len()];
        health[infected as usize] = Health::Infected;
        InitialState { health }
    }

    #[test]
    fn infected_phagocyte_takes_its_whole_zone_in_one_round() {
        let w = world(4, 40, 0, 11);
        let p = w.overlay.phagocytes().max_by_key(|&p| w.overlay.zone(p).len()).unwrap();
        let zone = w.overlay.zone(p).to_vec();
        assert!(zone.len() >= 5);
        let mut initial = all_immune_but(&w, p);
        for &h in &zone {
            initial.health[h as usize] = Health::Vulnerable;
        }
        let cfg = RunConfig {
            worm: WormParams {
                infection_attempts_per_tick: zone.len() as u32,
                ..WormParams::default()
            },
            defense_enabled: false,
            ..RunConfig::default()
        };
        let round = zone.iter().map(|&h| w.latency_ms(p, h).unwrap()).fold(0.0, f64::max);
        let mut sim = Simulation::with_initial(&w, cfg, initial).unwrap();
        while sim.step().is_some() {
            if sim.now_ms() > round {
                break;
            }
        }
        assert_eq!(sim.health_counts()[Health::Infected as usize], zone.len() + 1);
    }

    #[test]
    fn zero_success_probability_spreads_nothing() {
        let w = world(10, 60, 0, 2);
        let mut cfg = config(false, 3);
        cfg.worm.infection_success_prob = 0.0;
        let m = run_experiment(&w, &cfg).unwrap();
        assert_eq!(m.peak_infected, m.initial_infected);
    }

    #[test]
    fn immune_surroundings_stop_the_worm() {
        let w = world(10, 60, 0, 4);
        let host = w.overlay.managed().next().unwrap();
        let sim = Simulation::with_initial(&w, config(false, 1), all_immune_but(&w, host)).unwrap();
        let m = sim.run();
        assert_eq!(m.peak_infected, 1);
        assert!(m.end_time_ms < 1000.0, "ran until {}", m.end_time_ms);
    }

    #[test]
    fn runs_are_deterministic() {
        let w = world(20, 150, 0, 5);
        for defense in [false, true] {
            let a = run_experiment(&w, &config(defense, 9)).unwrap();
            let b = run_experiment(&w, &config(defense, 9)).unwrap();
            assert_eq!(a, b);
            let c = run_experiment(&w, &config(defense, 10)).unwrap();
            assert_ne!(a.infected_over_time, c.infected_over_time);
        }
    }

    #[test]
    fn health_is_conserved() {
        let w = world(20, 150, 0, 6);
        let mut sim = Simulation::new(&w, config(true, 2)).unwrap();
        let mut steps = 0;
        while sim.step().is_some() {
            steps += 1;
            if steps % 25 == 0 {
                assert_eq!(sim.health_counts(), sim.population().health_counts());
                assert_eq!(sim.health_counts().iter().sum::<usize>(), w.overlay.len());
            }
        }
        assert_eq!(sim.health_counts(), sim.population().health_counts());
        assert!(sim.active_infected().all(|n| !sim.population().node(n).is_quarantined()));
    }

    #[test]
    fn undefended_worm_takes_every_vulnerable_node() {
        let w = world(20, 150, 0, 7);
        for seed in 0..3 {
            let m = run_experiment(&w, &config(false, seed)).unwrap();
            assert_eq!(m.peak_infected, m.initial_vulnerable, "seed {seed}");
            assert_eq!(m.detections, 0);
        }
    }

    #[test]
    fn defense_never_raises_the_peak() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for i in 0..20 {
            let w = world(rng.gen_range(4..20), rng.gen_range(40..180), 0, i);
            let mut cfg = RunConfig {
                immune_ph_pct: rng.gen_range(0.0..100.0),
                immune_host_pct: rng.gen_range(0.0..40.0),
                initial_infect_pct: rng.gen_range(0.5..10.0),
                worm: WormParams {
                    infection_attempts_per_tick: rng.gen_range(1..8),
                    query_fanout: rng.gen_range(1..6),
                    ..WormParams::default()
                },
                sim: SimParams {
                    benign_history: rng.gen_range(0..40),
                    ..SimParams::default()
                },
                seed: i,
                ..RunConfig::default()
            };
            let on = run_experiment(&w, &cfg).unwrap();
            cfg.defense_enabled = false;
            let off = run_experiment(&w, &cfg).unwrap();
            assert!(on.peak_infected <= off.peak_infected, "config {i}: {} > {}", on.peak_infected, off.peak_infected);
        }
    }

    #[test]
    fn worm_traffic_never_leaves_a_defended_overlay() {
        let w = world(10, 80, 30, 8);
        let mut cfg = config(true, 4);
        cfg.sim.external_hosts = 30;
        cfg.initial_infect_pct = 5.0;
        cfg.worm.infection_attempts_per_tick = 4;
        let sim = Simulation::new(&w, cfg.clone()).unwrap();
        let m = sim.run();
        assert!(m.leaks_blocked > 0);
        cfg.defense_enabled = false;
        let mut sim = Simulation::new(&w, cfg).unwrap();
        while sim.step().is_some() {}
        assert!(sim.leaked() > 0);
    }

    #[test]
    fn too_many_externals_is_an_error() {
        let w = world(10, 80, 3, 8);
        let mut cfg = config(true, 4);
        cfg.sim.external_hosts = 4;
        assert!(matches!(Simulation::new(&w, cfg), Err(EngineError::InvalidParameter { name: "external_hosts", .. })));
    }
}
