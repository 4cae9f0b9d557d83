//! Levenshtein edit distance over byte strings.

/// Unit-cost edit distance (insertions, deletions, substitutions).
///
/// Uses the bit-parallel algorithm of Myers/Hyyrö when the shorter string
/// fits in a machine word, and a two-row dynamic program otherwise.
pub fn levenshtein(x: &[u8], y: &[u8]) -> usize {
    let (short, long) = if x.len() <= y.len() { (x, y) } else { (y, x) };
    if short.is_empty() {
        return long.len();
    }
    if short == long {
        return 0;
    }
    if short.len() <= 64 {
        bit_parallel(short, long)
    } else {
        two_row(short, long)
    }
}

fn bit_parallel(pattern: &[u8], text: &[u8]) -> usize {
    let m = pattern.len();
    let mut peq = [0u64; 256];
    for (i, &c) in pattern.iter().enumerate() {
        peq[c as usize] |= 1 << i;
    }
    let mask = if m == 64 { !0 } else { (1u64 << m) - 1 };
    let last = 1u64 << (m - 1);
    let mut pv = mask;
    let mut mv = 0u64;
    let mut score = m;
    for &c in text {
        let eq = peq[c as usize];
        let xv = eq | mv;
        let xh = (((eq & pv).wrapping_add(pv)) ^ pv) | eq;
        let mut ph = mv | !(xh | pv);
        let mut mh = pv & xh;
        if ph & last != 0 {
            score += 1;
        } else if mh & last != 0 {
            score -= 1;
        }
        ph = (ph << 1) | 1;
        mh <<= 1;
        pv = (mh | !(xv | ph)) & mask;
        mv = ph & xv & mask;
    }
    score
}

fn two_row(x: &[u8], y: &[u8]) -> usize {
    let mut prev: Vec<usize> = (0..=x.len()).collect();
    let mut cur = vec![0; x.len() + 1];
    for (j, &b) in y.iter().enumerate() {
        cur[0] = j + 1;
        for (i, &a) in x.iter().enumerate() {
            let sub = prev[i] + usize::from(a != b);
            cur[i + 1] = sub.min(prev[i + 1] + 1).min(cur[i] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[x.len()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::{HashSet, VecDeque};

    /// Full-matrix dynamic program.
    fn table(x: &[u8], y: &[u8]) -> usize {
        let mut d = vec![vec![0usize; y.len() + 1]; x.len() + 1];
        for (i, row) in d.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=y.len() {
            d[0][j] = j;
        }
        for i in 1..=x.len() {
            for j in 1..=y.len() {
                let sub = d[i - 1][j - 1] + usize::from(x[i - 1] != y[j - 1]);
                d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
            }
        }
        d[x.len()][y.len()]
    }

    /// Breadth-first search over single edits, restricted to symbols that
    /// occur in either string.
    fn edit_script_search(x: &[u8], y: &[u8]) -> usize {
        let alphabet: Vec<u8> = {
            let mut a: Vec<u8> = x.iter().chain(y).copied().collect();
            a.sort_unstable();
            a.dedup();
            a
        };
        let max_len = x.len().max(y.len());
        let mut seen = HashSet::from([x.to_vec()]);
        let mut queue = VecDeque::from([(x.to_vec(), 0usize)]);
        while let Some((s, dist)) = queue.pop_front() {
            if s == y {
                return dist;
            }
            let mut next = Vec::new();
            for i in 0..s.len() {
                let mut del = s.clone();
                del.remove(i);
                next.push(del);
                for &c in &alphabet {
                    let mut sub = s.clone();
                    sub[i] = c;
                    next.push(sub);
                }
            }
            if s.len() < max_len {
                for i in 0..=s.len() {
                    for &c in &alphabet {
                        let mut ins = s.clone();
                        ins.insert(i, c);
                        next.push(ins);
                    }
                }
            }
            for n in next {
                if seen.insert(n.clone()) {
                    queue.push_back((n, dist + 1));
                }
            }
        }
        unreachable!("y is always reachable")
    }

    #[test]
    fn examples() {
        assert_eq!(levenshtein(b"abc", b"abc"), 0);
        assert_eq!(levenshtein(b"", b"abc"), 3);
        assert_eq!(levenshtein(b"kitten", b"sitting"), 3);
        assert_eq!(edit_script_search(b"kitten", b"sitting"), 3);
        assert_eq!(levenshtein(b"abcd", b"abce"), 1);
    }

    #[test]
    fn long_strings_use_the_table_path() {
        let x: Vec<u8> = (0..200).map(|i| (i * 7 % 13) as u8).collect();
        let y: Vec<u8> = (0..180).map(|i| (i * 5 % 11) as u8).collect();
        assert_eq!(levenshtein(&x, &y), table(&x, &y));
        let x64: Vec<u8> = (0..64).map(|i| (i % 3) as u8).collect();
        let y70: Vec<u8> = (0..70).map(|i| (i % 4) as u8).collect();
        assert_eq!(levenshtein(&x64, &y70), table(&x64, &y70));
    }

    proptest! {
        #[test]
        fn matches_edit_script_search(
            x in proptest::collection::vec(0u8..3, 0..5),
            y in proptest::collection::vec(0u8..3, 0..5),
        ) {
            prop_assert_eq!(levenshtein(&x, &y), edit_script_search(&x, &y));
        }

        #[test]
        fn matches_full_table(
            x in proptest::collection::vec(any::<u8>(), 0..90),
            y in proptest::collection::vec(0u8..4, 0..90),
        ) {
            let d = levenshtein(&x, &y);
            prop_assert_eq!(d, table(&x, &y));
            prop_assert_eq!(d, levenshtein(&y, &x));
            prop_assert!(d <= x.len().max(y.len()));
        }
    }
}
