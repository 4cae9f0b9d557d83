use std::collections::HashMap;

use rand::seq::index::sample;
use rand::Rng;

use super::{DefenseParams, Population};
use crate::behavior::similarity_greedy;
use crate::NodeId;

/// Memoizes pairwise similarity decisions until either window changes.
///
/// Two windows count as similar when the greedy score exceeds θ_d in either
/// direction.
#[derive(Clone, Debug)]
pub struct SimilarityCache {
    theta_d: f64,
    entries: HashMap<(NodeId, NodeId), (u64, u64, bool)>,
    evaluations: u64,
}

impl SimilarityCache {
    pub fn new(theta_d: f64) -> Self {
        Self {
            theta_d,
            entries: HashMap::new(),
            evaluations: 0,
        }
    }

    pub fn theta_d(&self) -> f64 {
        self.theta_d
    }

    /// Similarity computations actually performed (cache misses).
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    pub fn similar(&mut self, pop: &Population, a: NodeId, b: NodeId) -> bool {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        let (na, nb) = (pop.node(a), pop.node(b));
        let versions = (na.window_version(), nb.window_version());
        if let Some(&(va, vb, hit)) = self.entries.get(&(a, b)) {
            if (va, vb) == versions {
                return hit;
            }
        }
        self.evaluations += 1;
        let theta = self.theta_d;
        let above = |x, y| similarity_greedy(x, y).is_ok_and(|r| r.score > theta);
        let hit = above(na.window(), nb.window()) || above(nb.window(), na.window());
        self.entries.insert((a, b), (versions.0, versions.1, hit));
        hit
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Members of the largest similarity cluster among `candidates` when it
/// holds a strict majority of them, otherwise nothing.
fn majority_cluster<R: Rng>(
    pop: &Population,
    candidates: &[NodeId],
    params: &DefenseParams,
    cache: &mut SimilarityCache,
    rng: &mut R,
) -> Vec<NodeId> {
    let n = candidates.len();
    if n < 2 {
        return Vec::new();
    }
    let mut parent: Vec<usize> = (0..n).collect();
    let mut consider = |i: usize, j: usize, parent: &mut Vec<usize>| {
        let (ri, rj) = (find(parent, i), find(parent, j));
        if ri != rj && cache.similar(pop, candidates[i], candidates[j]) {
            parent[ri.max(rj)] = ri.min(rj);
        }
    };
    if n > params.sample_above {
        let k = params.sample_peers.min(n - 1);
        for i in 0..n {
            for j in sample(rng, n - 1, k) {
                let j = if j >= i { j + 1 } else { j };
                consider(i, j, &mut parent);
            }
        }
    } else {
        for i in 0..n {
            for j in i + 1..n {
                consider(i, j, &mut parent);
            }
        }
    }
    let mut sizes = vec![0usize; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        sizes[r] += 1;
    }
    let (root, &size) = sizes.iter().enumerate().max_by_key(|&(r, &s)| (s, std::cmp::Reverse(r))).expect("n >= 2");
    if size < 2 || 2 * size <= n {
        return Vec::new();
    }
    (0..n).filter(|&i| find(&mut parent, i) == root).map(|i| candidates[i]).collect()
}

fn detect_among<R: Rng>(
    pop: &Population,
    ph: NodeId,
    pool: &[NodeId],
    params: &DefenseParams,
    cache: &mut SimilarityCache,
    rng: &mut R,
) -> Vec<NodeId> {
    if pop.node(ph).is_quarantined() {
        return Vec::new();
    }
    let candidates: Vec<NodeId> = pool.iter().copied().filter(|&h| !pop.node(h).is_quarantined()).collect();
    let mut flagged: Vec<NodeId> = candidates
        .iter()
        .copied()
        .filter(|&h| pop.node(h).connections() > params.rate_limit)
        .collect();
    flagged.extend(majority_cluster(pop, &candidates, params, cache, rng));
    flagged.sort_unstable();
    flagged.dedup();
    flagged
}

/// Hosts of `ph`'s zone that look infected: those over the connection rate
/// limit, plus the largest cluster of mutually similar windows when it
/// covers more than half of the zone. Quarantined hosts are skipped.
pub fn detect_managed<R: Rng>(
    pop: &Population,
    ph: NodeId,
    params: &DefenseParams,
    cache: &mut SimilarityCache,
    rng: &mut R,
) -> Vec<NodeId> {
    detect_among(pop, ph, pop.zone(ph), params, cache, rng)
}

/// The same test over `ph`'s neighboring Phagocytes.
pub fn detect_neighbors<R: Rng>(
    pop: &Population,
    ph: NodeId,
    params: &DefenseParams,
    cache: &mut SimilarityCache,
    rng: &mut R,
) -> Vec<NodeId> {
    detect_among(pop, ph, pop.tier_neighbors(ph), params, cache, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::{BehaviorPair, Operation};
    use crate::topology::{read_trace, OverlayGraph, TraceFormat};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn star(leaves: usize) -> (OverlayGraph, Population) {
        let mut t = String::from("U 0\nU 1\nE 0 1\n");
        for i in 0..leaves {
            t.push_str(&format!("L {} 0\n", 10 + i));
        }
        let g = read_trace(t.as_bytes(), TraceFormat::Text).unwrap();
        let pop = Population::from_overlay(&g, 100, true);
        (g, pop)
    }

    fn fill(pop: &mut Population, n: NodeId, payloads: &[&str]) {
        for p in payloads {
            pop.record(n, BehaviorPair::new(Operation::Query, p.as_bytes()).unwrap());
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    #[test]
    fn identical_zone_is_flagged() {
        let (_, mut pop) = star(4);
        let zone = pop.zone(0).to_vec();
        for &h in &zone {
            fill(&mut pop, h, &["worm", "key"]);
        }
        let p = DefenseParams::default();
        let mut cache = SimilarityCache::new(p.theta_d);
        assert_eq!(detect_managed(&pop, 0, &p, &mut cache, &mut rng()), zone);
    }

    #[test]
    fn half_is_not_a_majority() {
        let (_, mut pop) = star(4);
        let zone = pop.zone(0).to_vec();
        fill(&mut pop, zone[0], &["worm", "key"]);
        fill(&mut pop, zone[1], &["worm", "key"]);
        fill(&mut pop, zone[2], &["aaaa", "bbbb"]);
        fill(&mut pop, zone[3], &["cccc", "dddd"]);
        let p = DefenseParams::default();
        let mut cache = SimilarityCache::new(p.theta_d);
        assert!(detect_managed(&pop, 0, &p, &mut cache, &mut rng()).is_empty());
        // zone[0]'s window is fully matched inside zone[3]'s
        fill(&mut pop, zone[3], &["worm", "key"]);
        let flagged = detect_managed(&pop, 0, &p, &mut cache, &mut rng());
        assert_eq!(flagged, vec![zone[0], zone[1], zone[3]]);
    }

    #[test]
    fn rate_limit_flags_alone() {
        let (_, mut pop) = star(3);
        let h = pop.zone(0)[1];
        let p = DefenseParams {
            rate_limit: 5,
            ..DefenseParams::default()
        };
        for _ in 0..6 {
            pop.count_connection(h);
        }
        let mut cache = SimilarityCache::new(p.theta_d);
        assert_eq!(detect_managed(&pop, 0, &p, &mut cache, &mut rng()), vec![h]);
        pop.reset_connection_counts();
        assert!(detect_managed(&pop, 0, &p, &mut cache, &mut rng()).is_empty());
    }

    #[test]
    fn neighbor_majority() {
        let g = read_trace("U 0\nU 1\nU 2\nU 3\nU 4\nE 0 1\nE 0 2\nE 0 3\nE 0 4\n".as_bytes(), TraceFormat::Text).unwrap();
        let mut pop = Population::from_overlay(&g, 100, false);
        let p = DefenseParams::default();
        fill(&mut pop, 1, &["x1", "y1"]);
        fill(&mut pop, 2, &["x1", "y1"]);
        fill(&mut pop, 3, &["zzzz"]);
        fill(&mut pop, 4, &["wwww"]);
        let mut cache = SimilarityCache::new(p.theta_d);
        assert!(detect_neighbors(&pop, 0, &p, &mut cache, &mut rng()).is_empty());
        let mut pop3 = pop.clone();
        fill(&mut pop3, 3, &["x1", "y1", "x1", "y1"]);
        // 1's and 2's windows now embed into 3's
        assert_eq!(detect_neighbors(&pop3, 0, &p, &mut cache, &mut rng()), vec![1, 2, 3]);
    }

    #[test]
    fn cache_tracks_versions() {
        let (_, mut pop) = star(2);
        let z = pop.zone(0).to_vec();
        fill(&mut pop, z[0], &["a"]);
        fill(&mut pop, z[1], &["b"]);
        let mut cache = SimilarityCache::new(0.5);
        assert!(!cache.similar(&pop, z[0], z[1]));
        assert!(!cache.similar(&pop, z[1], z[0]));
        assert_eq!(cache.evaluations(), 1);
        fill(&mut pop, z[1], &["a"]);
        assert!(cache.similar(&pop, z[0], z[1]));
        assert_eq!(cache.evaluations(), 2);
    }

    #[test]
    fn sampling_still_finds_a_large_cluster() {
        let (_, mut pop) = star(300);
        let zone = pop.zone(0).to_vec();
        for (i, &h) in zone.iter().enumerate() {
            if i % 3 == 0 {
                fill(&mut pop, h, &[&format!("benign-{i}")]);
            } else {
                fill(&mut pop, h, &["worm"]);
            }
        }
        let p = DefenseParams::default();
        let mut cache = SimilarityCache::new(p.theta_d);
        let flagged = detect_managed(&pop, 0, &p, &mut cache, &mut rng());
        assert_eq!(flagged.len(), 200);
        assert!(cache.evaluations() < 300 * 299 / 2);
    }
}
