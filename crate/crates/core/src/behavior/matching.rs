use std::collections::HashMap;

use super::{pair_score, BehaviorError, BehaviorPair, BehaviorSequence, EXACT_ORACLE_CAP};

/// Outcome of aligning two windows.
///
/// `matches` holds `(i, j)` pairs meaning `bs1[i]` was aligned with
/// `bs2[j]`, ordered by `i`. The score is normalized by `|bs1|`, so unmatched
/// positions of a longer `bs1` count as zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityResult {
    pub score: f64,
    pub matches: Vec<(usize, usize)>,
}

impl SimilarityResult {
    /// Map from `bs2` positions to the `bs1` position they were matched with.
    pub fn permutation(&self, bs2_len: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; bs2_len];
        for &(i, j) in &self.matches {
            out[j] = Some(i);
        }
        out
    }

    pub fn is_injective(&self) -> bool {
        let mut a: Vec<usize> = self.matches.iter().map(|m| m.0).collect();
        let mut b: Vec<usize> = self.matches.iter().map(|m| m.1).collect();
        a.sort_unstable();
        b.sort_unstable();
        a.windows(2).all(|w| w[0] != w[1]) && b.windows(2).all(|w| w[0] != w[1])
    }

    /// Evaluates the similarity of the stored alignment from scratch.
    pub fn recompute(&self, bs1: &BehaviorSequence, bs2: &BehaviorSequence) -> f64 {
        if bs1.is_empty() {
            return 0.0;
        }
        let total: f64 = self
            .matches
            .iter()
            .map(|&(i, j)| pair_score(bs1.get(i).expect("bs1 index"), bs2.get(j).expect("bs2 index")))
            .sum();
        total / bs1.len() as f64
    }
}

/// Assigns equal pairs a shared class id, in order of first appearance.
fn classes<'a>(seq: &'a BehaviorSequence) -> (Vec<usize>, Vec<&'a BehaviorPair>) {
    let mut index: HashMap<&BehaviorPair, usize> = HashMap::new();
    let mut reps = Vec::new();
    let ids = seq
        .iter()
        .map(|p| {
            *index.entry(p).or_insert_with(|| {
                reps.push(p);
                reps.len() - 1
            })
        })
        .collect();
    (ids, reps)
}

/// Greedy alignment: `bs1` is walked in order and each element takes the
/// best-scoring unmatched element of `bs2`, ties going to the lowest index.
/// Matching stops once `bs2` is used up.
///
/// Equal pairs are grouped so each distinct pair of pairs is scored once;
/// the result is identical to the element-by-element scan.
pub fn similarity_greedy(bs1: &BehaviorSequence, bs2: &BehaviorSequence) -> Result<SimilarityResult, BehaviorError> {
    if bs1.is_empty() || bs2.is_empty() {
        return Err(BehaviorError::EmptySequence);
    }
    let (ids1, reps1) = classes(bs1);
    let (ids2, reps2) = classes(bs2);
    // Unmatched bs2 indices per class, ascending; `cursor` skips used ones.
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); reps2.len()];
    for (j, &c) in ids2.iter().enumerate() {
        members[c].push(j);
    }
    let mut cursor = vec![0usize; reps2.len()];
    let mut cache = vec![f64::NAN; reps1.len() * reps2.len()];

    let mut matches = Vec::with_capacity(bs1.len().min(bs2.len()));
    let mut total = 0.0;
    for (i, &c1) in ids1.iter().enumerate() {
        if matches.len() == bs2.len() {
            break;
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for c2 in 0..reps2.len() {
            let Some(&j) = members[c2].get(cursor[c2]) else { continue };
            let slot = &mut cache[c1 * reps2.len() + c2];
            if slot.is_nan() {
                *slot = pair_score(reps1[c1], reps2[c2]);
            }
            let s = *slot;
            let better = match best {
                None => true,
                Some((bs, bj, _)) => s > bs || (s == bs && j < bj),
            };
            if better {
                best = Some((s, j, c2));
            }
        }
        let (s, j, c2) = best.expect("bs2 not exhausted");
        cursor[c2] += 1;
        total += s;
        matches.push((i, j));
    }
    Ok(SimilarityResult {
        score: total / bs1.len() as f64,
        matches,
    })
}

/// Optimal alignment via the assignment problem, normalized by `|bs1|`.
pub fn similarity_exact(bs1: &BehaviorSequence, bs2: &BehaviorSequence) -> Result<SimilarityResult, BehaviorError> {
    if bs1.is_empty() || bs2.is_empty() {
        return Err(BehaviorError::EmptySequence);
    }
    for len in [bs1.len(), bs2.len()] {
        if len > EXACT_ORACLE_CAP {
            return Err(BehaviorError::OverOracleCap {
                len,
                cap: EXACT_ORACLE_CAP,
            });
        }
    }
    let weights: Vec<Vec<f64>> = bs1.iter().map(|a| bs2.iter().map(|b| pair_score(a, b)).collect()).collect();
    let (total, matches) = max_weight_assignment(&weights);
    Ok(SimilarityResult {
        score: total / bs1.len() as f64,
        matches,
    })
}

/// `similarity_greedy(bs1, bs2).score > theta_d`. Empty windows are never similar.
pub fn is_similar(bs1: &BehaviorSequence, bs2: &BehaviorSequence, theta_d: f64) -> bool {
    similarity_greedy(bs1, bs2).is_ok_and(|r| r.score > theta_d)
}

/// Maximum-weight assignment on a rectangular matrix; every row or every
/// column (whichever side is smaller) gets matched. Returns the total weight
/// and `(row, col)` pairs sorted by row.
pub(crate) fn max_weight_assignment(w: &[Vec<f64>]) -> (f64, Vec<(usize, usize)>) {
    let rows = w.len();
    let cols = w.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return (0.0, Vec::new());
    }
    let transpose = rows > cols;
    let (n, m) = if transpose { (cols, rows) } else { (rows, cols) };
    let cost = |i: usize, j: usize| if transpose { -w[j][i] } else { -w[i][j] };

    // Shortest augmenting path with potentials; 1-based, column 0 is a sentinel.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| p[j] != 0)
        .map(|j| if transpose { (j - 1, p[j] - 1) } else { (p[j] - 1, j - 1) })
        .collect();
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(i, j)| w[i][j]).sum();
    (total, pairs)
}
