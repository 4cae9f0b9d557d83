use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::defense::PatchKind;
use crate::NodeId;

/// Event kinds. At equal times, events run in declaration order, so a
/// patch landing at the same instant as an infection attempt wins.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    PatchDelivery,
    AlertDelivery,
    InfectionAttempt,
    HandshakeStep,
    ExternalAttack,
    DetectionTick,
    MetricSample,
}

impl EventKind {
    pub const COUNT: usize = 7;
}

/// Which message of a puzzle handshake an event carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Handshake {
    /// Message1 reaches the Phagocyte.
    Hello,
    /// Message2 reaches the client.
    Challenge,
    /// Message3 reaches the Phagocyte.
    Answer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Payload {
    None,
    Patch(PatchKind),
    Handshake { request: u32, step: Handshake },
    Attack { request: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimEvent {
    /// Simulated time in microseconds.
    pub time_us: u64,
    pub kind: EventKind,
    pub src: NodeId,
    pub dst: NodeId,
    pub payload: Payload,
}

impl SimEvent {
    pub fn new(time_us: u64, kind: EventKind, src: NodeId, dst: NodeId) -> Self {
        Self {
            time_us,
            kind,
            src,
            dst,
            payload: Payload::None,
        }
    }

    pub fn with_payload(mut self, payload: Payload) -> Self {
        self.payload = payload;
        self
    }

    pub fn time_ms(&self) -> f64 {
        self.time_us as f64 / 1000.0
    }
}

pub fn ms_to_us(ms: f64) -> u64 {
    (ms * 1000.0).round().max(0.0) as u64
}

#[derive(Debug)]
struct Entry {
    seq: u64,
    ev: SimEvent,
}

impl Entry {
    fn key(&self) -> (u64, EventKind, u64) {
        (self.ev.time_us, self.ev.kind, self.seq)
    }
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

/// Min-queue on `(time, kind, insertion order)`.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Entry>>,
    seq: u64,
    pending: [usize; EventKind::COUNT],
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, ev: SimEvent) {
        self.pending[ev.kind as usize] += 1;
        self.heap.push(Reverse(Entry { seq: self.seq, ev }));
        self.seq += 1;
    }

    pub fn pop(&mut self) -> Option<SimEvent> {
        let Reverse(e) = self.heap.pop()?;
        self.pending[e.ev.kind as usize] -= 1;
        Some(e.ev)
    }

    pub fn peek_time_us(&self) -> Option<u64> {
        self.heap.peek().map(|Reverse(e)| e.ev.time_us)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Queued events of one kind.
    pub fn pending(&self, kind: EventKind) -> usize {
        self.pending[kind as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ties_break_on_kind_then_order() {
        let mut q = EventQueue::new();
        q.push(SimEvent::new(5, EventKind::MetricSample, 0, 0));
        q.push(SimEvent::new(5, EventKind::InfectionAttempt, 1, 0));
        q.push(SimEvent::new(5, EventKind::InfectionAttempt, 2, 0));
        q.push(SimEvent::new(5, EventKind::PatchDelivery, 3, 0));
        q.push(SimEvent::new(4, EventKind::MetricSample, 4, 0));
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).map(|e| e.src).collect();
        assert_eq!(order, vec![4, 3, 1, 2, 0]);
    }

    proptest! {
        #[test]
        fn pops_in_nondecreasing_time(times in proptest::collection::vec(0u64..50, 1..100)) {
            let mut q = EventQueue::new();
            for (i, &t) in times.iter().enumerate() {
                q.push(SimEvent::new(t, EventKind::InfectionAttempt, i as NodeId, 0));
            }
            prop_assert_eq!(q.pending(EventKind::InfectionAttempt), times.len());
            let mut last = (0, 0);
            while let Some(e) = q.pop() {
                prop_assert!((e.time_us, e.src) >= last);
                last = (e.time_us, e.src);
            }
            prop_assert_eq!(q.pending(EventKind::InfectionAttempt), 0);
        }
    }
}
