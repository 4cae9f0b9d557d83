//! Behavior-sequence similarity.
//!
//! A host's recent requests form a window of `⟨operation, payload⟩` pairs.
//! Two windows are compared by reordering the second one to maximize
//!
//! ```text
//! sim = (1/n) Σ_j [o1_j = o2_j] · (1 − lev(p1_j, p2_j) / max(|p1_j|, |p2_j|))
//! ```
//!
//! [`similarity_greedy`] is what detection runs; [`similarity_exact`]
//! solves the underlying assignment problem and serves as its oracle.

mod edit;
mod matching;

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use edit::levenshtein;
pub use matching::{is_similar, similarity_exact, similarity_greedy, SimilarityResult};

/// Default payload bound in bytes.
pub const MAX_PAYLOAD: usize = 256;
/// Default behavior window: the latest 100 requests.
pub const DEFAULT_WINDOW: usize = 100;
/// Default detection threshold θ_d.
pub const DEFAULT_THETA_D: f64 = 0.5;
/// Longest sequence [`similarity_exact`] accepts by default.
pub const EXACT_ORACLE_CAP: usize = 64;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum BehaviorError {
    #[error("payload of {len} bytes exceeds the {max}-byte limit")]
    PayloadTooLong { len: usize, max: usize },
    #[error("behavior sequence is empty")]
    EmptySequence,
    #[error("sequence of length {len} exceeds the exact-matching cap of {cap}")]
    OverOracleCap { len: usize, cap: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    Query,
    Connect,
    Upload,
    Download,
    Other,
}

impl Operation {
    pub const ALL: [Operation; 5] = [
        Operation::Query,
        Operation::Connect,
        Operation::Upload,
        Operation::Download,
        Operation::Other,
    ];
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Operation::Query => "query",
            Operation::Connect => "connect",
            Operation::Upload => "upload",
            Operation::Download => "download",
            Operation::Other => "other",
        };
        f.write_str(s)
    }
}

/// One observed request. Payloads are shared, so cloning is cheap.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BehaviorPair {
    op: Operation,
    payload: Arc<[u8]>,
}

impl BehaviorPair {
    pub fn new(op: Operation, payload: impl Into<Arc<[u8]>>) -> Result<Self, BehaviorError> {
        Self::with_limit(op, payload, MAX_PAYLOAD)
    }

    pub fn with_limit(op: Operation, payload: impl Into<Arc<[u8]>>, max: usize) -> Result<Self, BehaviorError> {
        let payload = payload.into();
        if payload.len() > max {
            return Err(BehaviorError::PayloadTooLong { len: payload.len(), max });
        }
        Ok(Self { op, payload })
    }

    pub fn op(&self) -> Operation {
        self.op
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }
}

/// Score of one aligned pair: the operation indicator times the normalized
/// payload similarity. Two empty payloads count as identical.
pub fn pair_score(a: &BehaviorPair, b: &BehaviorPair) -> f64 {
    if a.op != b.op {
        return 0.0;
    }
    payload_score(&a.payload, &b.payload)
}

pub(crate) fn payload_score(p1: &[u8], p2: &[u8]) -> f64 {
    let longest = p1.len().max(p2.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(p1, p2) as f64 / longest as f64
}

/// Sliding window over a host's latest requests; appending to a full
/// window evicts the oldest pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BehaviorSequence {
    pairs: VecDeque<BehaviorPair>,
    capacity: usize,
}

impl BehaviorSequence {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "window capacity must be positive");
        Self {
            pairs: VecDeque::with_capacity(capacity.min(DEFAULT_WINDOW)),
            capacity,
        }
    }

    /// Builds a window from pairs, keeping the most recent `capacity`.
    pub fn from_pairs(capacity: usize, pairs: impl IntoIterator<Item = BehaviorPair>) -> Self {
        let mut s = Self::new(capacity);
        for p in pairs {
            s.push(p);
        }
        s
    }

    pub fn push(&mut self, pair: BehaviorPair) {
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back(pair);
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&BehaviorPair> {
        self.pairs.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &BehaviorPair> {
        self.pairs.iter()
    }
}

impl Default for BehaviorSequence {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(op: Operation, p: &str) -> BehaviorPair {
        BehaviorPair::new(op, p.as_bytes()).unwrap()
    }

    #[test]
    fn pair_score_examples() {
        let a = pair(Operation::Query, "abcd");
        assert_eq!(pair_score(&a, &a), 1.0);
        assert_eq!(pair_score(&a, &pair(Operation::Connect, "abcd")), 0.0);
        assert_eq!(pair_score(&a, &pair(Operation::Query, "abce")), 0.75);
        assert_eq!(pair_score(&pair(Operation::Other, ""), &pair(Operation::Other, "")), 1.0);
        assert_eq!(pair_score(&pair(Operation::Other, ""), &pair(Operation::Other, "xy")), 0.0);
    }

    #[test]
    fn payload_limit() {
        let big = vec![0u8; MAX_PAYLOAD + 1];
        assert_eq!(
            BehaviorPair::new(Operation::Upload, big).unwrap_err(),
            BehaviorError::PayloadTooLong { len: 257, max: 256 }
        );
        assert!(BehaviorPair::new(Operation::Upload, vec![0u8; MAX_PAYLOAD]).is_ok());
    }

    #[test]
    fn window_evicts_oldest() {
        let mut w = BehaviorSequence::new(3);
        for p in ["a", "b", "c", "d"] {
            w.push(pair(Operation::Query, p));
        }
        assert_eq!(w.len(), 3);
        assert_eq!(w.get(0).unwrap().payload(), b"b");
        assert_eq!(w.get(2).unwrap().payload(), b"d");
        assert_eq!(BehaviorSequence::default().capacity(), 100);
    }
}
