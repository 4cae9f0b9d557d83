//! External hosts reaching the overlay through Phagocytes: the latency
//! cost of proxying, and puzzle-protected admission under attack.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use super::event::{ms_to_us, EventKind, EventQueue, Handshake, Payload, SimEvent};
use super::metrics::{AttackOutcome, MetricSeries};
use super::{invalid, EngineError, World};
use crate::gatekeeper::{blowup_factor, proxy_latency, sim_address, Gatekeeper, GatekeeperConfig, Message1, Message3, Verdict};
use crate::topology::HostId;
use crate::NodeId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlowupParams {
    /// Spare underlay hosts acting as external clients.
    pub externals: usize,
    /// Extra round trips to the Phagocyte before the request is relayed.
    pub handshake_rtts: u32,
}

impl Default for BlowupParams {
    fn default() -> Self {
        Self {
            externals: 100,
            handshake_rtts: 0,
        }
    }
}

/// Latency blowup from every external host to every overlay node, each
/// request relayed by the target's Phagocyte (a Phagocyte serves itself).
pub fn measure_blowups(world: &World, params: &BlowupParams) -> Result<MetricSeries, EngineError> {
    let available = world.external_hosts().len();
    if params.externals > available {
        return Err(invalid("externals", format!("{} requested, the underlay has {available} spare hosts", params.externals)));
    }
    let g = &world.overlay;
    let mut out = MetricSeries {
        total_nodes: g.len(),
        ..Default::default()
    };
    for ext in world.external_hosts().take(params.externals) {
        for n in g.nodes() {
            let target = g.host(n);
            let proxy = g.host(g.manager(n).unwrap_or(n));
            let direct = world.underlay.path_latency(ext, target)?;
            out.latency_blowups.push(blowup_factor(&world.underlay, ext, proxy, target, params.handshake_rtts)?);
            out.latency_differences_ms
                .push(proxy_latency(&world.underlay, ext, proxy, target, params.handshake_rtts)? - direct);
        }
    }
    Ok(out)
}

/// Hash rate that solves a 26-bit puzzle in 24.728 s on average.
pub const DEFAULT_HASH_RATE: f64 = 67_108_864.0 / 24.728;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackParams {
    pub attackers: usize,
    /// Requests each attacker starts per second.
    pub frequency_per_s: f64,
    /// Hashes per second one attacker can compute.
    pub budget_hashes_per_s: f64,
    pub duration_s: f64,
    /// A request not solved this long after it started is given up.
    pub deadline_s: f64,
    pub gatekeeper: GatekeeperConfig,
    pub seed: u64,
}

impl Default for AttackParams {
    fn default() -> Self {
        Self {
            attackers: 100,
            frequency_per_s: 1.0,
            budget_hashes_per_s: DEFAULT_HASH_RATE,
            duration_s: 120.0,
            deadline_s: 2.0,
            gatekeeper: GatekeeperConfig {
                capacity_per_s: 0.05,
                load_window_s: 60.0,
                ..GatekeeperConfig::default()
            },
            seed: 0,
        }
    }
}

impl AttackParams {
    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.frequency_per_s >= 0.0 && self.frequency_per_s.is_finite()) {
            return Err(invalid("frequency_per_s", "must be finite and nonnegative"));
        }
        if !(self.budget_hashes_per_s >= 0.0) {
            return Err(invalid("budget_hashes_per_s", "must be nonnegative"));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(invalid("duration_s", "must be positive"));
        }
        if !(self.deadline_s > 0.0) {
            return Err(invalid("deadline_s", "must be positive"));
        }
        self.gatekeeper.validate().map_err(|e| invalid("gatekeeper", e.to_string()))
    }
}

struct Request {
    attacker: usize,
    ph: NodeId,
    started_us: u64,
    si_h: u64,
    si_p: u64,
    k: u8,
}

/// Attackers flood the Phagocytes with puzzle handshakes. Each attacker is
/// one CPU solving its puzzles in arrival order; the number of hashes a
/// puzzle takes is drawn from the geometric distribution of a brute-force
/// search. Returns how the requests ended.
pub fn run_external_attack(world: &World, params: &AttackParams) -> Result<AttackOutcome, EngineError> {
    params.validate()?;
    let available = world.external_hosts().len();
    if params.attackers > available {
        return Err(invalid("attackers", format!("{} requested, the underlay has {available} spare hosts", params.attackers)));
    }
    let phagocytes: Vec<NodeId> = world.overlay.phagocytes().collect();
    let mut outcome = AttackOutcome::default();
    if params.attackers == 0 || params.frequency_per_s == 0.0 || phagocytes.is_empty() {
        return Ok(outcome);
    }
    let attackers: Vec<HostId> = world.external_hosts().take(params.attackers).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut servers: Vec<Gatekeeper> = phagocytes
        .iter()
        .map(|_| Gatekeeper::new(params.gatekeeper.clone(), 0, &mut rng))
        .collect::<Result<_, _>>()
        .map_err(|e| invalid("gatekeeper", e.to_string()))?;
    let slot = |ph: NodeId| phagocytes.binary_search(&ph).expect("target is a Phagocyte");
    let latency = |a: HostId, ph: NodeId| world.underlay.path_latency(a, world.overlay.host(ph));

    let period_us = ms_to_us(1000.0 / params.frequency_per_s).max(1);
    let end_us = ms_to_us(params.duration_s * 1000.0);
    let deadline_us = ms_to_us(params.deadline_s * 1000.0);
    let mut cpu_free_us = vec![0u64; attackers.len()];
    let mut requests: Vec<Request> = Vec::new();
    let mut queue = EventQueue::new();
    for a in 0..attackers.len() {
        let phase = rng.gen_range(0..period_us);
        queue.push(SimEvent::new(phase, EventKind::ExternalAttack, a as NodeId, 0));
    }

    while let Some(ev) = queue.pop() {
        let now = ev.time_us;
        match (ev.kind, ev.payload) {
            (EventKind::ExternalAttack, _) => {
                let a = ev.src as usize;
                let ph = phagocytes[rng.gen_range(0..phagocytes.len())];
                let id = requests.len() as u32;
                requests.push(Request {
                    attacker: a,
                    ph,
                    started_us: now,
                    si_h: rng.gen(),
                    si_p: 0,
                    k: 0,
                });
                let hop = ms_to_us(latency(attackers[a], ph)?);
                queue.push(
                    SimEvent::new(now + hop, EventKind::HandshakeStep, a as NodeId, ph)
                        .with_payload(Payload::Handshake { request: id, step: Handshake::Hello }),
                );
                if now + period_us < end_us {
                    queue.push(SimEvent::new(now + period_us, EventKind::ExternalAttack, a as NodeId, 0));
                }
            }
            (EventKind::HandshakeStep, Payload::Handshake { request, step }) => {
                let r = &mut requests[request as usize];
                let ip = sim_address(attackers[r.attacker]);
                let hop = ms_to_us(latency(attackers[r.attacker], r.ph)?);
                match step {
                    Handshake::Hello => {
                        let m2 = servers[slot(r.ph)].challenge(ip, &Message1 { si_h: r.si_h }, now, &mut rng);
                        r.si_p = m2.si_p;
                        r.k = m2.k;
                        queue.push(
                            SimEvent::new(now + hop, EventKind::HandshakeStep, r.ph, r.attacker as NodeId)
                                .with_payload(Payload::Handshake { request, step: Handshake::Challenge }),
                        );
                    }
                    Handshake::Challenge => {
                        let give_up = r.started_us + deadline_us;
                        let cpu = &mut cpu_free_us[r.attacker];
                        let start = now.max(*cpu);
                        let hashes = Geometric::new(0.5f64.powi(r.k as i32)).expect("probability in (0, 1]").sample(&mut rng) + 1;
                        let solve_us = if params.budget_hashes_per_s > 0.0 {
                            (hashes as f64 / params.budget_hashes_per_s * 1e6).ceil()
                        } else {
                            f64::INFINITY
                        };
                        let finish = start as f64 + solve_us;
                        if start >= give_up {
                            outcome.timed_out += 1;
                        } else if finish > give_up as f64 {
                            *cpu = give_up;
                            outcome.timed_out += 1;
                        } else {
                            *cpu = finish as u64;
                            queue.push(
                                SimEvent::new(finish as u64 + hop, EventKind::HandshakeStep, r.attacker as NodeId, r.ph)
                                    .with_payload(Payload::Handshake { request, step: Handshake::Answer }),
                            );
                        }
                    }
                    Handshake::Answer => {
                        let m3 = Message3 {
                            si_h: r.si_h,
                            si_p: r.si_p,
                            k: r.k,
                            x: 0,
                            request: Vec::new(),
                        };
                        match servers[slot(r.ph)].admit_presolved(ip, &m3, now, &mut rng) {
                            Verdict::Admit(_) => outcome.success += 1,
                            Verdict::Reject(_) => outcome.rejected += 1,
                        }
                    }
                }
            }
            _ => unreachable!("attack queue holds only attack and handshake events"),
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{TraceSpec, TransitStubParams};

    fn world() -> World {
        World::synthesize(&TraceSpec::new(12, 60), &TransitStubParams::desk(), 20, 3).unwrap()
    }

    fn attack(attackers: usize, frequency: f64, budget: f64) -> AttackOutcome {
        let params = AttackParams {
            attackers,
            frequency_per_s: frequency,
            budget_hashes_per_s: budget,
            duration_s: 60.0,
            seed: 5,
            ..AttackParams::default()
        };
        run_external_attack(&world(), &params).unwrap()
    }

    #[test]
    fn no_budget_never_succeeds() {
        let o = attack(5, 1.0, 0.0);
        assert!(o.total() > 0);
        assert_eq!(o.success, 0);
        assert_eq!(o.success_pct(), 0.0);
    }

    #[test]
    fn lone_slow_attacker_gets_through() {
        let o = attack(1, 0.2, DEFAULT_HASH_RATE);
        assert!(o.total() >= 10);
        assert!(o.success_pct() >= 95.0, "{o:?}");
    }

    #[test]
    fn doubling_frequency_never_helps() {
        let mut last = f64::INFINITY;
        for f in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let pct = attack(20, f, DEFAULT_HASH_RATE).success_pct();
            assert!(pct <= last + 2.0, "{f} req/s: {pct}% after {last}%");
            last = pct;
        }
    }

    #[test]
    fn blowups_are_at_least_one() {
        let w = world();
        let m = measure_blowups(&w, &BlowupParams { externals: 10, handshake_rtts: 0 }).unwrap();
        assert_eq!(m.latency_blowups.len(), 10 * w.overlay.len());
        assert!(m.latency_blowups.iter().all(|&b| b >= 1.0 - 1e-12));
        assert!(m.latency_differences_ms.iter().all(|&d| d >= -1e-9));
        // a Phagocyte serves itself, so its pairs cost nothing extra
        let ph = w.overlay.phagocytes().next().unwrap() as usize;
        assert_eq!(m.latency_blowups[ph], 1.0);
        let err = measure_blowups(&w, &BlowupParams { externals: 21, handshake_rtts: 0 }).unwrap_err();
        assert!(matches!(err, EngineError::InvalidParameter { name: "externals", .. }));
    }
}
