use std::net::IpAddr;

use hmac::{Hmac, Mac};
use rand::RngCore;
use sha1::Sha1;
use sha2::{Digest, Sha256};

use super::state::{AdaptationState, LoadMeter, ReplayDb, ServerSecret};
use super::wire::{Message1, Message2, Message3, RejectReason, Verdict};
use super::{GatekeeperConfig, GatekeeperError, HashAlg};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum SessionStatus {
    Initiated,
    Challenged,
    Solved,
    Verified,
    Rejected,
}

/// Client-side record of one handshake.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PuzzleSession {
    pub si_h: u64,
    pub si_p: u64,
    pub k: u8,
    pub solution_x: u64,
    status: SessionStatus,
}

impl PuzzleSession {
    pub fn status(&self) -> SessionStatus {
        self.status
    }

    fn advance(&mut self, from: SessionStatus, to: SessionStatus) -> Result<(), GatekeeperError> {
        if self.status != from {
            return Err(GatekeeperError::OutOfOrder {
                expected: from,
                actual: self.status,
            });
        }
        self.status = to;
        Ok(())
    }

    /// Takes the server's challenge. A challenge echoing a nonce this client
    /// never sent aborts the session.
    pub fn accept_challenge(&mut self, m2: &Message2) -> Result<(), GatekeeperError> {
        if m2.si_h != self.si_h {
            self.status = SessionStatus::Rejected;
            return Err(GatekeeperError::NonceMismatch {
                sent: self.si_h,
                echoed: m2.si_h,
            });
        }
        self.advance(SessionStatus::Initiated, SessionStatus::Challenged)?;
        self.si_p = m2.si_p;
        self.k = m2.k;
        Ok(())
    }

    pub fn message3(&self, request: Vec<u8>) -> Result<Message3, GatekeeperError> {
        if self.status != SessionStatus::Solved {
            return Err(GatekeeperError::OutOfOrder {
                expected: SessionStatus::Solved,
                actual: self.status,
            });
        }
        Ok(Message3 {
            si_h: self.si_h,
            si_p: self.si_p,
            k: self.k,
            x: self.solution_x,
            request,
        })
    }

    /// Records the server's answer.
    pub fn finish(&mut self, verdict: &Verdict) -> Result<(), GatekeeperError> {
        match verdict {
            Verdict::Admit(_) => self.advance(SessionStatus::Solved, SessionStatus::Verified),
            Verdict::Reject(_) => {
                self.status = SessionStatus::Rejected;
                Ok(())
            }
        }
    }
}

/// Starts a handshake with a fresh 64-bit nonce.
pub fn client_init<R: RngCore>(rng: &mut R) -> (PuzzleSession, Message1) {
    let si_h = rng.next_u64();
    let session = PuzzleSession {
        si_h,
        si_p: 0,
        k: 0,
        solution_x: 0,
        status: SessionStatus::Initiated,
    };
    (session, Message1 { si_h })
}

/// `round(k_max · max(load, min(1, solves / solve_cap)))`.
pub fn choose_difficulty(a: &AdaptationState, client: IpAddr, now_us: u64, k_max: u8) -> u8 {
    let load = a.server_load.clamp(0.0, 1.0);
    let client_term = (a.solves_in_window(client, now_us) as f64 / a.solve_cap() as f64).min(1.0);
    let k = (k_max as f64 * load.max(client_term)).round();
    k.clamp(0.0, k_max as f64) as u8
}

fn ip_bytes(ip: IpAddr) -> Vec<u8> {
    match ip {
        IpAddr::V4(v4) => v4.octets().to_vec(),
        IpAddr::V6(v6) => v6.octets().to_vec(),
    }
}

fn truncate64(mac: &[u8]) -> u64 {
    u64::from_be_bytes(mac[..8].try_into().expect("MAC is at least 8 bytes"))
}

/// Server identifier: first 8 bytes of `HMAC(key, ip ‖ si_h ‖ k)`.
pub fn server_identifier(alg: HashAlg, key: &[u8], ip: IpAddr, si_h: u64, k: u8) -> u64 {
    let ip = ip_bytes(ip);
    macro_rules! mac {
        ($h:ty) => {{
            let mut m = <Hmac<$h>>::new_from_slice(key).expect("HMAC accepts any key length");
            m.update(&ip);
            m.update(&si_h.to_be_bytes());
            m.update(&[k]);
            truncate64(&m.finalize().into_bytes())
        }};
    }
    match alg {
        HashAlg::Sha1 => mac!(Sha1),
        HashAlg::Sha256 => mac!(Sha256),
    }
}

/// Builds the challenge. Nothing is stored on the server.
pub fn make_challenge(secret: &ServerSecret, alg: HashAlg, ip: IpAddr, si_h: u64, k: u8) -> Message2 {
    Message2 {
        si_h,
        si_p: server_identifier(alg, secret.current(), ip, si_h, k),
        k,
    }
}

fn leading_zero_bits(digest: &[u8]) -> u32 {
    let mut n = 0;
    for &b in digest {
        if b == 0 {
            n += 8;
        } else {
            return n + b.leading_zeros();
        }
    }
    n
}

/// Number of leading zero bits of `h(si_h ‖ si_p ‖ x)`.
pub fn solution_zero_bits(alg: HashAlg, si_h: u64, si_p: u64, x: u64) -> u32 {
    let mut input = [0u8; 24];
    input[..8].copy_from_slice(&si_h.to_be_bytes());
    input[8..16].copy_from_slice(&si_p.to_be_bytes());
    input[16..].copy_from_slice(&x.to_be_bytes());
    match alg {
        HashAlg::Sha1 => leading_zero_bits(&Sha1::digest(input)),
        HashAlg::Sha256 => leading_zero_bits(&Sha256::digest(input)),
    }
}

pub fn solution_ok(alg: HashAlg, si_h: u64, si_p: u64, k: u8, x: u64) -> bool {
    k == 0 || solution_zero_bits(alg, si_h, si_p, x) >= k as u32
}

/// Tries `start, start+1, …` until a solution turns up or `max_attempts`
/// candidates were checked. Returns the solution and the attempts spent.
pub fn solve_from(alg: HashAlg, si_h: u64, si_p: u64, k: u8, start: u64, max_attempts: u64) -> Option<(u64, u64)> {
    let mut x = start;
    for attempt in 1..=max_attempts {
        if solution_ok(alg, si_h, si_p, k, x) {
            return Some((x, attempt));
        }
        x = x.wrapping_add(1);
    }
    None
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Solution {
    pub x: u64,
    /// Candidates checked, including the successful one.
    pub attempts: u64,
}

/// Brute-forces the challenge from a random start.
pub fn client_solve<R: RngCore>(session: &mut PuzzleSession, alg: HashAlg, rng: &mut R) -> Result<Solution, GatekeeperError> {
    if session.status != SessionStatus::Challenged {
        return Err(GatekeeperError::OutOfOrder {
            expected: SessionStatus::Challenged,
            actual: session.status,
        });
    }
    let start = rng.next_u64();
    let (x, attempts) = solve_from(alg, session.si_h, session.si_p, session.k, start, u64::MAX).expect("a solution exists");
    session.solution_x = x;
    session.advance(SessionStatus::Challenged, SessionStatus::Solved)?;
    Ok(Solution { x, attempts })
}

/// Server-side checks, in order: (a) the identifier pair is fresh,
/// (b) `si_p` matches `(ip, si_h, k)` under the current or previous secret,
/// (c) the solution has `k` leading zero bits, (d) the pair is recorded.
/// The first failing check decides the rejection.
pub fn verify_and_admit(
    secret: &ServerSecret,
    alg: HashAlg,
    replay: &mut ReplayDb,
    ip: IpAddr,
    msg3: &Message3,
    now_us: u64,
) -> Result<(), RejectReason> {
    verify(secret, alg, replay, ip, msg3, now_us, true)
}

fn verify(
    secret: &ServerSecret,
    alg: HashAlg,
    replay: &mut ReplayDb,
    ip: IpAddr,
    msg3: &Message3,
    now_us: u64,
    check_solution: bool,
) -> Result<(), RejectReason> {
    replay.expire(now_us);
    if replay.contains(msg3.si_h, msg3.si_p) {
        return Err(RejectReason::Replay);
    }
    let authentic = std::iter::once(secret.current())
        .chain(secret.previous())
        .any(|key| server_identifier(alg, key, ip, msg3.si_h, msg3.k) == msg3.si_p);
    if !authentic {
        return Err(RejectReason::ForgedIdentifier);
    }
    if check_solution && !solution_ok(alg, msg3.si_h, msg3.si_p, msg3.k, msg3.x) {
        return Err(RejectReason::BadSolution);
    }
    replay.insert(msg3.si_h, msg3.si_p, now_us + 2 * secret.rotation_period_us());
    Ok(())
}

/// Counters kept by a [`Gatekeeper`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GatekeeperStats {
    pub challenges: u64,
    pub admitted: u64,
    pub replays: u64,
    pub forged: u64,
    pub bad_solutions: u64,
}

/// Server endpoint of the handshake, as run by one Phagocyte.
#[derive(Clone, Debug)]
pub struct Gatekeeper {
    config: GatekeeperConfig,
    secret: ServerSecret,
    replay: ReplayDb,
    adaptation: AdaptationState,
    meter: LoadMeter,
    stats: GatekeeperStats,
}

impl Gatekeeper {
    pub fn new<R: RngCore>(config: GatekeeperConfig, now_us: u64, rng: &mut R) -> Result<Self, GatekeeperError> {
        config.validate()?;
        let period = config.rotation_period_us();
        Ok(Self {
            secret: ServerSecret::new(config.secret_bits, period, now_us, rng)?,
            replay: ReplayDb::new(),
            adaptation: AdaptationState::new(period, config.solve_cap),
            meter: LoadMeter::new((config.load_window_s * 1e6) as u64, config.capacity_per_s),
            stats: GatekeeperStats::default(),
            config,
        })
    }

    pub fn config(&self) -> &GatekeeperConfig {
        &self.config
    }

    pub fn secret(&self) -> &ServerSecret {
        &self.secret
    }

    pub fn replay_db(&self) -> &ReplayDb {
        &self.replay
    }

    pub fn adaptation(&self) -> &AdaptationState {
        &self.adaptation
    }

    pub fn stats(&self) -> GatekeeperStats {
        self.stats
    }

    /// Pins the load term, for experiments that model load externally.
    pub fn set_load(&mut self, load: f64) {
        self.adaptation.server_load = load.clamp(0.0, 1.0);
    }

    fn tick<R: RngCore>(&mut self, now_us: u64, rng: &mut R) {
        self.secret.maybe_rotate(now_us, rng);
        if self.config.capacity_per_s > 0.0 {
            self.adaptation.server_load = self.meter.load(now_us);
        }
    }

    /// Step 2: answers a Message1 with a challenge.
    pub fn challenge<R: RngCore>(&mut self, ip: IpAddr, m1: &Message1, now_us: u64, rng: &mut R) -> Message2 {
        self.tick(now_us, rng);
        self.stats.challenges += 1;
        let k = choose_difficulty(&self.adaptation, ip, now_us, self.config.k_max);
        make_challenge(&self.secret, self.config.hash, ip, m1.si_h, k)
    }

    /// Verifies a Message3 and, when it passes, proxies the request through
    /// `forward`.
    pub fn admit<R: RngCore>(
        &mut self,
        ip: IpAddr,
        m3: &Message3,
        now_us: u64,
        rng: &mut R,
        forward: impl FnOnce(&[u8]) -> Vec<u8>,
    ) -> Verdict {
        self.admit_inner(ip, m3, now_us, rng, true, forward)
    }

    /// Admission for a client whose solving is simulated: every check but
    /// the solution itself runs as usual.
    pub(crate) fn admit_presolved<R: RngCore>(&mut self, ip: IpAddr, m3: &Message3, now_us: u64, rng: &mut R) -> Verdict {
        self.admit_inner(ip, m3, now_us, rng, false, |_| Vec::new())
    }

    fn admit_inner<R: RngCore>(
        &mut self,
        ip: IpAddr,
        m3: &Message3,
        now_us: u64,
        rng: &mut R,
        check_solution: bool,
        forward: impl FnOnce(&[u8]) -> Vec<u8>,
    ) -> Verdict {
        self.tick(now_us, rng);
        match verify(&self.secret, self.config.hash, &mut self.replay, ip, m3, now_us, check_solution) {
            Ok(()) => {
                self.stats.admitted += 1;
                self.adaptation.record_solve(ip, now_us);
                self.meter.record(now_us);
                Verdict::Admit(forward(&m3.request))
            }
            Err(reason) => {
                match reason {
                    RejectReason::Replay => self.stats.replays += 1,
                    RejectReason::ForgedIdentifier => self.stats.forged += 1,
                    RejectReason::BadSolution => self.stats.bad_solutions += 1,
                }
                Verdict::Reject(reason)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::net::{Ipv4Addr, Ipv6Addr};

    const IP: IpAddr = IpAddr::V4(Ipv4Addr::new(192, 0, 2, 7));
    const PERIOD: u64 = 300_000_000;

    fn secret() -> ServerSecret {
        ServerSecret::from_key(b"\x01\x02\x03\x04", PERIOD)
    }

    /// Builds the HMAC input by hand.
    fn reference_identifier(key: &[u8], ip: &[u8], si_h: u64, k: u8) -> u64 {
        let mut msg = ip.to_vec();
        msg.extend_from_slice(&si_h.to_be_bytes());
        msg.push(k);
        let mut m = <Hmac<Sha1>>::new_from_slice(key).unwrap();
        m.update(&msg);
        let out = m.finalize().into_bytes();
        u64::from_be_bytes(out[..8].try_into().unwrap())
    }

    #[test]
    fn identifier_layout() {
        let key = [9u8, 8, 7, 6];
        assert_eq!(
            server_identifier(HashAlg::Sha1, &key, IP, 42, 5),
            reference_identifier(&key, &[192, 0, 2, 7], 42, 5)
        );
        let v6 = IpAddr::V6(Ipv6Addr::LOCALHOST);
        assert_eq!(
            server_identifier(HashAlg::Sha1, &key, v6, 42, 5),
            reference_identifier(&key, &Ipv6Addr::LOCALHOST.octets(), 42, 5)
        );
        assert_ne!(
            server_identifier(HashAlg::Sha1, &key, IP, 42, 5),
            server_identifier(HashAlg::Sha256, &key, IP, 42, 5)
        );
    }

    #[test]
    fn challenge_depends_on_every_input() {
        let s = secret();
        let a = make_challenge(&s, HashAlg::Sha1, IP, 7, 3);
        assert_eq!(a, make_challenge(&s, HashAlg::Sha1, IP, 7, 3));
        assert_ne!(a.si_p, make_challenge(&s, HashAlg::Sha1, IP, 7, 4).si_p);
        let mut rotated = s.clone();
        rotated.rotate(1, &mut ChaCha8Rng::seed_from_u64(0));
        assert_ne!(a.si_p, make_challenge(&rotated, HashAlg::Sha1, IP, 7, 3).si_p);
    }

    #[test]
    fn leading_zero_count() {
        assert_eq!(leading_zero_bits(&[0, 0x10, 0xff]), 11);
        assert_eq!(leading_zero_bits(&[0x80]), 0);
        assert_eq!(leading_zero_bits(&[0, 0]), 16);
    }

    #[test]
    fn zero_difficulty_takes_one_attempt() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut s, m1) = client_init(&mut rng);
        let m2 = make_challenge(&secret(), HashAlg::Sha1, IP, m1.si_h, 0);
        s.accept_challenge(&m2).unwrap();
        assert_eq!(client_solve(&mut s, HashAlg::Sha1, &mut rng).unwrap().attempts, 1);
    }

    #[test]
    fn mismatched_nonce_aborts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut s, m1) = client_init(&mut rng);
        let m2 = make_challenge(&secret(), HashAlg::Sha1, IP, m1.si_h ^ 1, 0);
        assert!(matches!(s.accept_challenge(&m2), Err(GatekeeperError::NonceMismatch { .. })));
        assert_eq!(s.status(), SessionStatus::Rejected);
    }

    fn handshake(s: &ServerSecret, k: u8, seed: u64) -> Message3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut session, m1) = client_init(&mut rng);
        session.accept_challenge(&make_challenge(s, HashAlg::Sha1, IP, m1.si_h, k)).unwrap();
        client_solve(&mut session, HashAlg::Sha1, &mut rng).unwrap();
        session.message3(b"GET /".to_vec()).unwrap()
    }

    #[test]
    fn checks_run_in_order() {
        let s = secret();
        let mut db = ReplayDb::new();
        let m3 = handshake(&s, 6, 1);
        assert_eq!(verify_and_admit(&s, HashAlg::Sha1, &mut db, IP, &m3, 0), Ok(()));
        assert_eq!(verify_and_admit(&s, HashAlg::Sha1, &mut db, IP, &m3, 1), Err(RejectReason::Replay));

        // lowering k breaks the identifier before the solution is looked at
        let m3 = handshake(&s, 12, 2);
        let mut cheap = m3.clone();
        cheap.k = 2;
        cheap.x = solve_from(HashAlg::Sha1, cheap.si_h, cheap.si_p, 2, 0, 1 << 20).unwrap().0;
        assert_eq!(
            verify_and_admit(&s, HashAlg::Sha1, &mut db, IP, &cheap, 0),
            Err(RejectReason::ForgedIdentifier)
        );
        let mut wrong = m3.clone();
        wrong.x = (0..).find(|&x| !solution_ok(HashAlg::Sha1, m3.si_h, m3.si_p, 12, x)).unwrap();
        assert_eq!(
            verify_and_admit(&s, HashAlg::Sha1, &mut db, IP, &wrong, 0),
            Err(RejectReason::BadSolution)
        );
        // failed checks leave no trace, the honest message still goes through
        assert_eq!(verify_and_admit(&s, HashAlg::Sha1, &mut db, IP, &m3, 0), Ok(()));
        let other = IpAddr::V4(Ipv4Addr::new(192, 0, 2, 8));
        let m3b = handshake(&s, 3, 3);
        assert_eq!(
            verify_and_admit(&s, HashAlg::Sha1, &mut db, other, &m3b, 0),
            Err(RejectReason::ForgedIdentifier)
        );
    }

    #[test]
    fn previous_secret_is_honored_once() {
        let mut s = secret();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m3 = handshake(&s, 4, 4);
        s.rotate(PERIOD, &mut rng);
        let mut db = ReplayDb::new();
        assert_eq!(verify_and_admit(&s, HashAlg::Sha1, &mut db, IP, &m3.clone(), PERIOD), Ok(()));
        let m3 = handshake(&secret(), 4, 5);
        s.rotate(2 * PERIOD, &mut rng);
        assert_eq!(
            verify_and_admit(&s, HashAlg::Sha1, &mut db, IP, &m3, 2 * PERIOD),
            Err(RejectReason::ForgedIdentifier)
        );
    }

    #[test]
    fn difficulty_examples() {
        let ip = IP;
        let mut a = AdaptationState::new(PERIOD, 16);
        assert_eq!(choose_difficulty(&a, ip, 0, 26), 0);
        a.server_load = 1.0;
        assert_eq!(choose_difficulty(&a, ip, 0, 26), 26);
        a.server_load = 0.0;
        for t in 0..16 {
            a.record_solve(ip, t);
        }
        assert_eq!(choose_difficulty(&a, ip, 16, 26), 26);
        let mut b = AdaptationState::new(PERIOD, 16);
        for t in 0..8 {
            b.record_solve(ip, t);
        }
        assert_eq!(choose_difficulty(&b, ip, 8, 26), 13);
        assert_eq!(choose_difficulty(&b, ip, PERIOD + 8, 26), 0);
    }

    #[test]
    fn gatekeeper_session_lifecycle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut gk = Gatekeeper::new(GatekeeperConfig::default(), 0, &mut rng).unwrap();
        let (mut session, m1) = client_init(&mut rng);
        let m2 = gk.challenge(IP, &m1, 0, &mut rng);
        assert_eq!(m2.k, 0);
        session.accept_challenge(&m2).unwrap();
        client_solve(&mut session, gk.config().hash, &mut rng).unwrap();
        let m3 = session.message3(b"ping".to_vec()).unwrap();
        let v = gk.admit(IP, &m3, 1, &mut rng, |r| [r, b"-pong"].concat());
        assert_eq!(v, Verdict::Admit(b"ping-pong".to_vec()));
        session.finish(&v).unwrap();
        assert_eq!(session.status(), SessionStatus::Verified);
        assert_eq!(gk.admit(IP, &m3, 2, &mut rng, |r| r.to_vec()), Verdict::Reject(RejectReason::Replay));
        assert_eq!(gk.stats().admitted, 1);
        assert_eq!(gk.stats().replays, 1);
    }

    #[test]
    fn challenges_allocate_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut gk = Gatekeeper::new(GatekeeperConfig::default(), 0, &mut rng).unwrap();
        for i in 0..10_000u64 {
            let ip = IpAddr::V4(Ipv4Addr::from(i as u32));
            gk.challenge(ip, &Message1 { si_h: i }, i, &mut rng);
        }
        assert_eq!(gk.replay_db().len(), 0);
        assert_eq!(gk.adaptation().tracked_clients(), 0);
    }
}
