use std::collections::{BTreeMap, HashMap, VecDeque};
use std::net::IpAddr;

use rand::RngCore;

use super::GatekeeperError;

/// Keyed-hash secret, rotated every `rotation_period_us`. The secret of the
/// previous epoch stays valid so challenges issued just before a rotation
/// can still be answered.
#[derive(Clone, Debug)]
pub struct ServerSecret {
    current: Vec<u8>,
    previous: Option<Vec<u8>>,
    epoch: u64,
    rotation_period_us: u64,
    epoch_started_us: u64,
}

impl ServerSecret {
    pub fn new<R: RngCore>(width_bits: u32, rotation_period_us: u64, now_us: u64, rng: &mut R) -> Result<Self, GatekeeperError> {
        if width_bits == 0 || width_bits > 256 || width_bits % 8 != 0 {
            return Err(GatekeeperError::SecretWidth(width_bits));
        }
        if rotation_period_us == 0 {
            return Err(GatekeeperError::Config("rotation period must be positive".into()));
        }
        let mut current = vec![0u8; width_bits as usize / 8];
        rng.fill_bytes(&mut current);
        Ok(Self {
            current,
            previous: None,
            epoch: 0,
            rotation_period_us,
            epoch_started_us: now_us,
        })
    }

    /// Builds a secret from explicit key bytes; for tests and fixtures.
    pub fn from_key(key: &[u8], rotation_period_us: u64) -> Self {
        Self {
            current: key.to_vec(),
            previous: None,
            epoch: 0,
            rotation_period_us,
            epoch_started_us: 0,
        }
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn rotation_period_us(&self) -> u64 {
        self.rotation_period_us
    }

    pub fn width_bits(&self) -> u32 {
        self.current.len() as u32 * 8
    }

    pub fn current(&self) -> &[u8] {
        &self.current
    }

    pub fn previous(&self) -> Option<&[u8]> {
        self.previous.as_deref()
    }

    /// Replaces the secret unconditionally.
    pub fn rotate<R: RngCore>(&mut self, now_us: u64, rng: &mut R) {
        let mut next = vec![0u8; self.current.len()];
        rng.fill_bytes(&mut next);
        self.previous = Some(std::mem::replace(&mut self.current, next));
        self.epoch += 1;
        self.epoch_started_us = now_us;
    }

    /// Rotates if the period has elapsed. After two or more missed periods
    /// the previous secret is dropped too. Returns whether it rotated.
    pub fn maybe_rotate<R: RngCore>(&mut self, now_us: u64, rng: &mut R) -> bool {
        let elapsed = now_us.saturating_sub(self.epoch_started_us);
        if elapsed < self.rotation_period_us {
            return false;
        }
        let periods = elapsed / self.rotation_period_us;
        self.rotate(self.epoch_started_us + periods * self.rotation_period_us, rng);
        if periods >= 2 {
            self.previous = None;
        }
        true
    }
}

/// Inputs of the difficulty choice: how loaded the server is and how many
/// puzzles each client solved recently.
#[derive(Clone, Debug)]
pub struct AdaptationState {
    /// Consumed over total resources, in `[0, 1]`.
    pub server_load: f64,
    window_us: u64,
    solve_cap: u32,
    solves: BTreeMap<IpAddr, VecDeque<u64>>,
}

impl AdaptationState {
    pub fn new(window_us: u64, solve_cap: u32) -> Self {
        Self {
            server_load: 0.0,
            window_us,
            solve_cap: solve_cap.max(1),
            solves: BTreeMap::new(),
        }
    }

    pub fn solve_cap(&self) -> u32 {
        self.solve_cap
    }

    pub fn record_solve(&mut self, client: IpAddr, now_us: u64) {
        self.prune(now_us);
        self.solves.entry(client).or_default().push_back(now_us);
    }

    /// Solves by `client` within the window ending at `now_us`.
    pub fn solves_in_window(&self, client: IpAddr, now_us: u64) -> usize {
        self.solves
            .get(&client)
            .map_or(0, |q| q.iter().filter(|&&t| t + self.window_us > now_us).count())
    }

    /// Drops solves older than the window.
    pub fn prune(&mut self, now_us: u64) {
        let window = self.window_us;
        self.solves.retain(|_, q| {
            while q.front().is_some_and(|&t| t + window <= now_us) {
                q.pop_front();
            }
            !q.is_empty()
        });
    }

    /// Clients with at least one solve still tracked.
    pub fn tracked_clients(&self) -> usize {
        self.solves.len()
    }
}

/// Identifier pairs already admitted, each kept until its expiry.
#[derive(Clone, Debug, Default)]
pub struct ReplayDb {
    seen: HashMap<(u64, u64), u64>,
    expiries: VecDeque<(u64, (u64, u64))>,
}

impl ReplayDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, si_h: u64, si_p: u64) -> bool {
        self.seen.contains_key(&(si_h, si_p))
    }

    /// Records a pair until `expires_us`. Callers pass nondecreasing expiries.
    pub fn insert(&mut self, si_h: u64, si_p: u64, expires_us: u64) {
        self.seen.insert((si_h, si_p), expires_us);
        self.expiries.push_back((expires_us, (si_h, si_p)));
    }

    pub fn expire(&mut self, now_us: u64) {
        while let Some(&(t, key)) = self.expiries.front() {
            if t > now_us {
                break;
            }
            self.expiries.pop_front();
            if self.seen.get(&key) == Some(&t) {
                self.seen.remove(&key);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

/// Sliding-window admission counter; load is admissions in the window over
/// what the server can serve in that time.
#[derive(Clone, Debug)]
pub struct LoadMeter {
    window_us: u64,
    capacity: f64,
    events: VecDeque<u64>,
}

impl LoadMeter {
    /// `capacity_per_s` requests per second saturate the server.
    pub fn new(window_us: u64, capacity_per_s: f64) -> Self {
        Self {
            window_us: window_us.max(1),
            capacity: (capacity_per_s * window_us as f64 / 1e6).max(f64::MIN_POSITIVE),
            events: VecDeque::new(),
        }
    }

    pub fn record(&mut self, now_us: u64) {
        self.events.push_back(now_us);
    }

    pub fn load(&mut self, now_us: u64) -> f64 {
        while self.events.front().is_some_and(|&t| t + self.window_us <= now_us) {
            self.events.pop_front();
        }
        (self.events.len() as f64 / self.capacity).min(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::net::Ipv4Addr;

    const MIN: u64 = 60_000_000;

    #[test]
    fn secret_rotation_keeps_one_previous_epoch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ServerSecret::new(32, 5 * MIN, 0, &mut rng).unwrap();
        assert_eq!(s.current().len(), 4);
        let first = s.current().to_vec();
        assert!(!s.maybe_rotate(5 * MIN - 1, &mut rng));
        assert!(s.maybe_rotate(5 * MIN, &mut rng));
        assert_eq!(s.previous(), Some(&first[..]));
        assert_eq!(s.epoch(), 1);
        assert!(s.maybe_rotate(20 * MIN, &mut rng));
        assert_eq!(s.previous(), None);
        assert!(ServerSecret::new(12, MIN, 0, &mut rng).is_err());
        assert!(ServerSecret::new(264, MIN, 0, &mut rng).is_err());
        assert_eq!(ServerSecret::new(256, MIN, 0, &mut rng).unwrap().width_bits(), 256);
    }

    #[test]
    fn solve_counts_decay() {
        let ip = IpAddr::V4(Ipv4Addr::new(10, 0, 0, 1));
        let mut a = AdaptationState::new(5 * MIN, 16);
        a.record_solve(ip, MIN);
        a.record_solve(ip, 2 * MIN);
        assert_eq!(a.solves_in_window(ip, 3 * MIN), 2);
        assert_eq!(a.solves_in_window(ip, 6 * MIN + 1), 1);
        a.prune(8 * MIN);
        assert_eq!(a.tracked_clients(), 0);
    }

    #[test]
    fn replay_entries_expire() {
        let mut db = ReplayDb::new();
        db.insert(1, 2, 100);
        db.insert(3, 4, 200);
        assert!(db.contains(1, 2));
        db.expire(150);
        assert!(!db.contains(1, 2));
        assert!(db.contains(3, 4));
        db.expire(200);
        assert!(db.is_empty());
    }

    #[test]
    fn load_meter_saturates() {
        let mut m = LoadMeter::new(1_000_000, 10.0);
        for t in 0..5 {
            m.record(t * 1000);
        }
        assert!((m.load(10_000) - 0.5).abs() < 1e-12);
        for t in 0..20 {
            m.record(20_000 + t);
        }
        assert_eq!(m.load(30_000), 1.0);
        assert_eq!(m.load(2_000_000), 0.0);
    }
}
