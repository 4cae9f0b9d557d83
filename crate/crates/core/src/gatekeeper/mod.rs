//! Puzzle-based admission control for external hosts.
//!
//! An external host reaches the overlay only through a Phagocyte, after a
//! three-message handshake:
//!
//! 1. the client sends a 64-bit nonce `si_h`;
//! 2. the server picks a difficulty `k` and answers with
//!    `si_p = HMAC(secret, ip ‖ si_h ‖ k)` truncated to 64 bits, keeping no
//!    state;
//! 3. the client finds `x` such that `h(si_h ‖ si_p ‖ x)` starts with `k`
//!    zero bits and sends it with its request.
//!
//! The server then checks freshness, the identifier, and the solution, in
//! that order, before proxying the request.

mod net;
mod protocol;
mod state;
pub mod wire;

use std::net::IpAddr;

use serde::{Deserialize, Serialize};

use crate::topology::{HostId, TopologyError, UnderlayGraph};

pub use net::{handshake_tcp, handshake_udp, serve_tcp, serve_udp, ClientReport};
pub use protocol::{
    choose_difficulty, client_init, client_solve, make_challenge, server_identifier, solution_ok, solution_zero_bits,
    solve_from, verify_and_admit, Gatekeeper, GatekeeperStats, PuzzleSession, SessionStatus, Solution,
};
pub use state::{AdaptationState, LoadMeter, ReplayDb, ServerSecret};
pub use wire::{Message1, Message2, Message3, RejectReason, Verdict};

#[derive(Debug, thiserror::Error)]
pub enum GatekeeperError {
    #[error("message truncated: need {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("body of {0} bytes exceeds the wire limit")]
    BodyTooLong(usize),
    #[error("unknown verdict status {0}")]
    UnknownStatus(u8),
    #[error("challenge echoes nonce {echoed:#x}, expected {sent:#x}")]
    NonceMismatch { sent: u64, echoed: u64 },
    #[error("session is {actual:?}, expected {expected:?}")]
    OutOfOrder {
        expected: SessionStatus,
        actual: SessionStatus,
    },
    #[error("secret width {0} bits must be a positive multiple of 8 up to 256")]
    SecretWidth(u32),
    #[error("invalid gatekeeper configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Hash used both for the identifier MAC and for the puzzle.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HashAlg {
    #[default]
    Sha1,
    Sha256,
}

impl std::str::FromStr for HashAlg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sha1" => Ok(HashAlg::Sha1),
            "sha256" => Ok(HashAlg::Sha256),
            other => Err(format!("unknown hash `{other}` (expected sha1 or sha256)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatekeeperConfig {
    pub k_max: u8,
    pub rotation_period_s: f64,
    pub secret_bits: u32,
    /// Solves within one rotation period that push a client to `k_max`.
    pub solve_cap: u32,
    pub hash: HashAlg,
    /// Admissions per second that count as full load; 0 disables load tracking.
    pub capacity_per_s: f64,
    pub load_window_s: f64,
}

impl Default for GatekeeperConfig {
    fn default() -> Self {
        Self {
            k_max: 26,
            rotation_period_s: 300.0,
            secret_bits: 32,
            solve_cap: 16,
            hash: HashAlg::Sha1,
            capacity_per_s: 0.0,
            load_window_s: 1.0,
        }
    }
}

impl GatekeeperConfig {
    pub fn validate(&self) -> Result<(), GatekeeperError> {
        if self.k_max > 64 {
            return Err(GatekeeperError::Config(format!("k_max = {} exceeds 64", self.k_max)));
        }
        if !(self.rotation_period_s > 0.0) {
            return Err(GatekeeperError::Config("rotation_period_s must be positive".into()));
        }
        if self.secret_bits == 0 || self.secret_bits > 256 || self.secret_bits % 8 != 0 {
            return Err(GatekeeperError::SecretWidth(self.secret_bits));
        }
        if self.solve_cap == 0 {
            return Err(GatekeeperError::Config("solve_cap must be positive".into()));
        }
        if !(self.capacity_per_s >= 0.0) || !(self.load_window_s > 0.0) {
            return Err(GatekeeperError::Config("capacity_per_s and load_window_s must be nonnegative/positive".into()));
        }
        Ok(())
    }

    pub fn rotation_period_us(&self) -> u64 {
        (self.rotation_period_s * 1e6).round() as u64
    }
}

/// End-to-end latency in ms of reaching `target` from `ext` through the
/// Phagocyte `ph`: the handshake costs `handshake_rtts` extra round trips
/// between `ext` and `ph` before the request is relayed.
pub fn proxy_latency(
    g: &UnderlayGraph,
    ext: HostId,
    ph: HostId,
    target: HostId,
    handshake_rtts: u32,
) -> Result<f64, TopologyError> {
    let to_ph = g.path_latency(ext, ph)?;
    let relay = g.path_latency(ph, target)?;
    Ok(to_ph + relay + 2.0 * handshake_rtts as f64 * to_ph)
}

/// Proxied latency over direct latency. Infinite when `ext == target`.
pub fn blowup_factor(
    g: &UnderlayGraph,
    ext: HostId,
    ph: HostId,
    target: HostId,
    handshake_rtts: u32,
) -> Result<f64, TopologyError> {
    let direct = g.path_latency(ext, target)?;
    Ok(proxy_latency(g, ext, ph, target, handshake_rtts)? / direct)
}

/// Address used for a simulated host in the identifier MAC.
pub fn sim_address(host: HostId) -> IpAddr {
    IpAddr::V4(std::net::Ipv4Addr::from(0x0a00_0000 | (host & 0x00ff_ffff)))
}
