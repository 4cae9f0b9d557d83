use std::collections::BTreeSet;

use crate::NodeId;

/// `direct` or more than `theta_a` of the `degree` neighbors alerted.
pub fn should_broadcast(direct: bool, alerts_received: usize, degree: usize, theta_a: f64) -> bool {
    direct || (degree > 0 && alerts_received as f64 / degree as f64 > theta_a)
}

/// One Phagocyte's view of a worm alert wave.
///
/// A Phagocyte broadcasts at most once per wave: when it detects the worm
/// itself, or when the share of neighbors that alerted it exceeds θ_a.
/// The broadcast skips neighbors it heard from.
#[derive(Clone, Debug)]
pub struct AlertState {
    theta_a: f64,
    received_from: BTreeSet<NodeId>,
    broadcast: bool,
}

impl AlertState {
    pub fn new(theta_a: f64) -> Self {
        Self {
            theta_a,
            received_from: BTreeSet::new(),
            broadcast: false,
        }
    }

    pub fn has_broadcast(&self) -> bool {
        self.broadcast
    }

    pub fn received_from(&self) -> &BTreeSet<NodeId> {
        &self.received_from
    }

    /// Local detection. Returns the broadcast targets, if this is the first
    /// broadcast of the wave.
    pub fn on_detection(&mut self, neighbors: &[NodeId]) -> Option<Vec<NodeId>> {
        self.decide(true, neighbors)
    }

    /// An alert from `from`. Returns the broadcast targets if the threshold
    /// is crossed now.
    pub fn on_alert(&mut self, from: NodeId, neighbors: &[NodeId]) -> Option<Vec<NodeId>> {
        if neighbors.contains(&from) {
            self.received_from.insert(from);
        }
        self.decide(false, neighbors)
    }

    fn decide(&mut self, direct: bool, neighbors: &[NodeId]) -> Option<Vec<NodeId>> {
        if self.broadcast || !should_broadcast(direct, self.received_from.len(), neighbors.len(), self.theta_a) {
            return None;
        }
        self.broadcast = true;
        Some(neighbors.iter().copied().filter(|n| !self.received_from.contains(n)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::VecDeque;

    #[test]
    fn threshold_examples() {
        assert!(should_broadcast(false, 3, 4, 0.5));
        assert!(!should_broadcast(false, 2, 4, 0.5));
        assert!(should_broadcast(true, 0, 4, 0.5));
        assert!(!should_broadcast(false, 0, 0, 0.5));
    }

    #[test]
    fn broadcasts_once_and_skips_senders() {
        let nbrs = [1, 2, 3, 4];
        let mut a = AlertState::new(0.5);
        assert_eq!(a.on_alert(1, &nbrs), None);
        assert_eq!(a.on_alert(2, &nbrs), None);
        assert_eq!(a.on_alert(3, &nbrs), Some(vec![4]));
        assert_eq!(a.on_alert(4, &nbrs), None);
        assert_eq!(a.on_detection(&nbrs), None);
        let mut b = AlertState::new(0.5);
        assert_eq!(b.on_detection(&nbrs), Some(vec![1, 2, 3, 4]));
    }

    /// Least set containing the detectors and closed under the majority rule,
    /// by repeated sweeps until nothing changes.
    fn fixed_point(adj: &[Vec<NodeId>], detectors: &[bool], theta_a: f64) -> Vec<bool> {
        let mut on = detectors.to_vec();
        loop {
            let mut changed = false;
            for v in 0..adj.len() {
                if on[v] {
                    continue;
                }
                let k = adj[v].iter().filter(|&&u| on[u as usize]).count();
                if !adj[v].is_empty() && k as f64 / adj[v].len() as f64 > theta_a {
                    on[v] = true;
                    changed = true;
                }
            }
            if !changed {
                return on;
            }
        }
    }

    /// Message passing with alerts delivered in a random order.
    fn simulate(adj: &[Vec<NodeId>], detectors: &[bool], theta_a: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
        let mut st: Vec<AlertState> = adj.iter().map(|_| AlertState::new(theta_a)).collect();
        let mut inflight: Vec<(NodeId, NodeId)> = Vec::new();
        for v in 0..adj.len() {
            if detectors[v] {
                for t in st[v].on_detection(&adj[v]).unwrap() {
                    inflight.push((v as NodeId, t));
                }
            }
        }
        let mut queue: VecDeque<(NodeId, NodeId)> = VecDeque::new();
        while !inflight.is_empty() || !queue.is_empty() {
            inflight.shuffle(rng);
            queue.extend(inflight.drain(..));
            let (from, to) = queue.remove(rng.gen_range(0..queue.len())).unwrap();
            if let Some(ts) = st[to as usize].on_alert(from, &adj[to as usize]) {
                inflight.extend(ts.into_iter().map(|t| (to, t)));
            }
        }
        st.iter().map(|s| s.has_broadcast()).collect()
    }

    fn random_graph(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<NodeId>> {
        let mut adj = vec![Vec::new(); n];
        for a in 0..n {
            for b in a + 1..n {
                if rng.gen_bool(p) {
                    adj[a].push(b as NodeId);
                    adj[b].push(a as NodeId);
                }
            }
        }
        adj
    }

    proptest! {
        #[test]
        fn spread_equals_fixed_point(seed in any::<u64>(), n in 2usize..=20, p in 0.1f64..0.6, theta in 0.5f64..0.9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let adj = random_graph(n, p, &mut rng);
            let mut detectors = vec![false; n];
            detectors[rng.gen_range(0..n)] = true;
            let expected = fixed_point(&adj, &detectors, theta);
            prop_assert_eq!(simulate(&adj, &detectors, theta, &mut rng), expected);
        }
    }
}
