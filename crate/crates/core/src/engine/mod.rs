//! Discrete-event simulation of worm outbreaks and external attacks.
//!
//! A run owns its [`Population`] and an [`EventQueue`]. Messages travel
//! with underlay latency. Every tick the worm acts first and then every
//! Phagocyte whose view changed scans its zone and its neighbors.

mod event;
mod external;
mod metrics;
mod sim;

use std::ops::Range;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::defense::{DefenseParams, Health, Population};
use crate::topology::{
    synthesize_overlay, synthesize_underlay, HostId, OverlayGraph, TopologyError, TraceSpec, TransitStubParams, UnderlayGraph,
};
use crate::NodeId;

pub use event::{ms_to_us, EventKind, EventQueue, Handshake, Payload, SimEvent};
pub use external::{measure_blowups, run_external_attack, AttackParams, BlowupParams, DEFAULT_HASH_RATE};
pub use metrics::{cdf_points, fraction_below, quantile_sorted, AttackOutcome, AttackSummary, BlowupSummary, MetricSeries, Sample, Summary};
pub use sim::{run_experiment, Simulation};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("{0}")]
    Infeasible(String),
    #[error("invalid parameter {name}: {message}")]
    InvalidParameter { name: &'static str, message: String },
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

fn invalid(name: &'static str, message: impl Into<String>) -> EngineError {
    EngineError::InvalidParameter {
        name,
        message: message.into(),
    }
}

/// How the worm spreads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WormParams {
    /// Attempts one infected node makes per tick, over all vectors.
    pub infection_attempts_per_tick: u32,
    /// Chance that an attempt on a vulnerable node infects it.
    pub infection_success_prob: f64,
    /// Hosts under other Phagocytes reached by one wave of key queries.
    pub query_fanout: u32,
}

impl Default for WormParams {
    fn default() -> Self {
        Self {
            infection_attempts_per_tick: 1,
            infection_success_prob: 1.0,
            query_fanout: 4,
        }
    }
}

impl WormParams {
    pub fn validate(&self) -> Result<(), EngineError> {
        if !(0.0..=1.0).contains(&self.infection_success_prob) {
            return Err(invalid("infection_success_prob", format!("{} is outside [0, 1]", self.infection_success_prob)));
        }
        Ok(())
    }
}

/// Clock, budget and window settings of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimParams {
    pub tick_ms: f64,
    pub max_events: u64,
    pub max_time_s: f64,
    /// Requests a Phagocyte keeps per host.
    pub window: usize,
    /// Benign requests each window holds when the run starts.
    pub benign_history: usize,
    /// External hosts that worm queries may be aimed at.
    pub external_hosts: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            tick_ms: 100.0,
            max_events: 1_000_000,
            max_time_s: 600.0,
            window: crate::behavior::DEFAULT_WINDOW,
            benign_history: 0,
            external_hosts: 0,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.tick_ms > 0.0) {
            return Err(invalid("tick_ms", "must be positive"));
        }
        if !(self.max_time_s > 0.0) {
            return Err(invalid("max_time_s", "must be positive"));
        }
        if self.window == 0 {
            return Err(invalid("window", "must be positive"));
        }
        if self.benign_history > self.window {
            return Err(invalid("benign_history", format!("{} exceeds the window of {}", self.benign_history, self.window)));
        }
        Ok(())
    }
}

/// One internal-defense run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub immune_ph_pct: f64,
    pub immune_host_pct: f64,
    pub initial_infect_pct: f64,
    pub worm: WormParams,
    pub defense_enabled: bool,
    pub defense: DefenseParams,
    pub sim: SimParams,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            immune_ph_pct: 95.0,
            immune_host_pct: 10.0,
            initial_infect_pct: 0.001,
            worm: WormParams::default(),
            defense_enabled: true,
            defense: DefenseParams::default(),
            sim: SimParams::default(),
            seed: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        for (name, v) in [
            ("immune_ph_pct", self.immune_ph_pct),
            ("immune_host_pct", self.immune_host_pct),
            ("initial_infect_pct", self.initial_infect_pct),
        ] {
            check_pct(name, v)?;
        }
        self.worm.validate()?;
        self.sim.validate()?;
        self.defense.validate().map_err(|m| invalid("defense", m))
    }
}

fn check_pct(name: &'static str, v: f64) -> Result<(), EngineError> {
    if (0.0..=100.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(name, format!("{v} is outside [0, 100]")))
    }
}

/// An overlay laid over an underlay. Underlay hosts beyond the ones the
/// overlay uses serve as external hosts.
#[derive(Debug)]
pub struct World {
    pub underlay: UnderlayGraph,
    pub overlay: OverlayGraph,
    externals: Range<HostId>,
}

impl World {
    /// Uses every underlay host at or above `first_external` as an
    /// external host.
    pub fn new(underlay: UnderlayGraph, overlay: OverlayGraph, first_external: HostId) -> Result<Self, EngineError> {
        if let Some(n) = overlay.nodes().find(|&n| overlay.host(n) >= first_external) {
            return Err(invalid("first_external", format!("overlay node {n} sits on external host {}", overlay.host(n))));
        }
        let end = underlay.host_count() as HostId;
        Ok(Self {
            underlay,
            overlay,
            externals: first_external.min(end)..end,
        })
    }

    /// Synthesizes a transit-stub underlay with `external_hosts` spare
    /// hosts and the overlay described by `spec` on top of it.
    pub fn synthesize(spec: &TraceSpec, params: &TransitStubParams, external_hosts: usize, seed: u64) -> Result<Self, EngineError> {
        let demand = spec.host_demand();
        let underlay = synthesize_underlay(params, demand + external_hosts, seed)?;
        let overlay = synthesize_overlay(spec, &underlay, seed)?;
        Self::new(underlay, overlay, demand as HostId)
    }

    pub fn external_hosts(&self) -> Range<HostId> {
        self.externals.clone()
    }

    /// One-way latency in ms between two overlay nodes, if they can reach
    /// each other.
    pub fn latency_ms(&self, a: NodeId, b: NodeId) -> Option<f64> {
        self.underlay.path_latency(self.overlay.host(a), self.overlay.host(b)).ok()
    }
}

/// Starting health of every overlay node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InitialState {
    pub health: Vec<Health>,
}

impl InitialState {
    pub fn count(&self, h: Health) -> usize {
        self.health.iter().filter(|&&x| x == h).count()
    }

    pub fn apply(&self, pop: &mut Population) {
        for (n, &h) in self.health.iter().enumerate() {
            pop.set_initial_health(n as NodeId, h);
        }
    }
}

fn rounded_share(pct: f64, n: usize) -> usize {
    ((pct / 100.0 * n as f64).round() as usize).min(n)
}

/// Picks immune Phagocytes, immune managed hosts, and initially infected
/// nodes (uniformly among the vulnerable of both tiers). Counts are
/// rounded to the nearest integer; a positive infection share infects at
/// least one node.
pub fn seed_outbreak(
    g: &OverlayGraph,
    immune_ph_pct: f64,
    immune_host_pct: f64,
    initial_infect_pct: f64,
    rng_seed: u64,
) -> Result<InitialState, EngineError> {
    check_pct("immune_ph_pct", immune_ph_pct)?;
    check_pct("immune_host_pct", immune_host_pct)?;
    check_pct("initial_infect_pct", initial_infect_pct)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut health = vec![Health::Vulnerable; g.len()];
    for (tier, pct) in [(g.phagocytes().collect::<Vec<_>>(), immune_ph_pct), (g.managed().collect(), immune_host_pct)] {
        for i in sample(&mut rng, tier.len(), rounded_share(pct, tier.len())) {
            health[tier[i] as usize] = Health::Immune;
        }
    }
    let vulnerable: Vec<NodeId> = g.nodes().filter(|&n| health[n as usize] == Health::Vulnerable).collect();
    let mut infected = rounded_share(initial_infect_pct, vulnerable.len());
    if initial_infect_pct > 0.0 {
        infected = infected.max(1);
    }
    if infected > vulnerable.len() {
        return Err(EngineError::Infeasible(format!(
            "{initial_infect_pct}% infection needs {infected} vulnerable nodes, only {} exist",
            vulnerable.len()
        )));
    }
    for i in sample(&mut rng, vulnerable.len(), infected) {
        health[vulnerable[i] as usize] = Health::Infected;
    }
    Ok(InitialState { health })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::TraceSpec;

    fn world(n_ph: usize, n_managed: usize, seed: u64) -> World {
        World::synthesize(&TraceSpec::new(n_ph, n_managed), &TransitStubParams::desk(), 5, seed).unwrap()
    }

    #[test]
    fn seeding_counts_are_exact() {
        let w = world(200, 1000, 1);
        let (n_ph, n_m) = (w.overlay.phagocyte_count(), w.overlay.managed_count());
        let s = seed_outbreak(&w.overlay, 95.0, 10.0, 1.0, 7).unwrap();
        let immune_ph = w.overlay.phagocytes().filter(|&n| s.health[n as usize] == Health::Immune).count();
        let immune_m = w.overlay.managed().filter(|&n| s.health[n as usize] == Health::Immune).count();
        assert_eq!(immune_ph, (0.95 * n_ph as f64).round() as usize);
        assert_eq!(immune_m, (0.10 * n_m as f64).round() as usize);
        let vulnerable_before = w.overlay.len() - immune_ph - immune_m;
        assert_eq!(s.count(Health::Infected), (0.01 * vulnerable_before as f64).round() as usize);
        assert_eq!(s, seed_outbreak(&w.overlay, 95.0, 10.0, 1.0, 7).unwrap());
        assert_ne!(s, seed_outbreak(&w.overlay, 95.0, 10.0, 1.0, 8).unwrap());
    }

    #[test]
    fn tiny_share_still_infects_one() {
        let w = world(50, 200, 2);
        let s = seed_outbreak(&w.overlay, 50.0, 10.0, 0.001, 1).unwrap();
        assert_eq!(s.count(Health::Infected), 1);
        let none = seed_outbreak(&w.overlay, 50.0, 10.0, 0.0, 1).unwrap();
        assert_eq!(none.count(Health::Infected), 0);
    }

    #[test]
    fn infeasible_and_invalid() {
        let w = world(50, 200, 3);
        assert!(matches!(seed_outbreak(&w.overlay, 100.0, 100.0, 1.0, 1), Err(EngineError::Infeasible(_))));
        let all = seed_outbreak(&w.overlay, 100.0, 100.0, 0.0, 1).unwrap();
        assert_eq!(all.count(Health::Immune), w.overlay.len());
        assert!(seed_outbreak(&w.overlay, 120.0, 0.0, 0.0, 1).is_err());
        let full = seed_outbreak(&w.overlay, 0.0, 0.0, 100.0, 1).unwrap();
        assert_eq!(full.count(Health::Infected), w.overlay.len());
    }

    #[test]
    fn externals_sit_past_the_overlay() {
        let w = world(50, 200, 4);
        assert_eq!(w.external_hosts().len(), 5);
        assert!(w.overlay.nodes().all(|n| !w.external_hosts().contains(&w.overlay.host(n))));
    }
}
