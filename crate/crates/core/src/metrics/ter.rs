//! Translation edit rate with per-token edit weights.
//!
//! Edits that touch a reference term token cost `term_cost`; all other
//! edits, and every block shift, cost `base_cost`. The rate is normalised
//! by the weighted reference length.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::Serialize;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerConfig {
    pub term_cost: f64,
    pub base_cost: f64,
    pub shifts: bool,
    /// Upper bound on greedy shift rounds.
    pub max_shift_iterations: usize,
    pub max_shift_size: usize,
    pub max_shift_distance: usize,
    /// Hypotheses up to this length get an exact search over shift
    /// sequences after the greedy pass.
    pub exact_search_limit: usize,
}

impl Default for TerConfig {
    fn default() -> Self {
        Self {
            term_cost: 2.0,
            base_cost: 1.0,
            shifts: true,
            max_shift_iterations: 20,
            max_shift_size: 10,
            max_shift_distance: 50,
            exact_search_limit: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TerResult {
    /// Edit cost including shifts.
    pub edit_cost: f64,
    pub ref_weight: f64,
    pub shifts: usize,
    pub ter: f64,
}

/// Weighted Levenshtein distance. Substituting or dropping reference token
/// `j` costs `ref_costs[j]`; an extra hypothesis token costs `extra_cost`.
pub fn weighted_edit_distance<T: PartialEq>(hyp: &[T], reference: &[T], ref_costs: &[f64], extra_cost: f64) -> f64 {
    debug_assert_eq!(reference.len(), ref_costs.len());
    let m = reference.len();
    let mut prev: Vec<f64> = Vec::with_capacity(m + 1);
    prev.push(0.0);
    for j in 0..m {
        prev.push(prev[j] + ref_costs[j]);
    }
    let mut row = vec![0.0; m + 1];
    for h in hyp {
        row[0] = prev[0] + extra_cost;
        for j in 1..=m {
            let sub = prev[j - 1] + if *h == reference[j - 1] { 0.0 } else { ref_costs[j - 1] };
            let extra = prev[j] + extra_cost;
            let missing = row[j - 1] + ref_costs[j - 1];
            row[j] = sub.min(extra).min(missing);
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[m]
}

/// Moves `seq[start..start + len]` so that it begins at `dest` within the
/// sequence that remains after removing it.
fn apply_shift(seq: &[u32], start: usize, len: usize, dest: usize) -> Vec<u32> {
    let block = &seq[start..start + len];
    let mut rest: Vec<u32> = Vec::with_capacity(seq.len());
    rest.extend_from_slice(&seq[..start]);
    rest.extend_from_slice(&seq[start + len..]);
    let mut out = Vec::with_capacity(seq.len());
    out.extend_from_slice(&rest[..dest]);
    out.extend_from_slice(block);
    out.extend_from_slice(&rest[dest..]);
    out
}

fn all_shifts(seq: &[u32]) -> impl Iterator<Item = Vec<u32>> + '_ {
    let n = seq.len();
    (0..n).flat_map(move |start| {
        (1..=n - start).flat_map(move |len| {
            (0..=n - len)
                .filter(move |&dest| dest != start)
                .map(move |dest| apply_shift(seq, start, len, dest))
        })
    })
}

struct Problem<'a> {
    reference: &'a [u32],
    costs: &'a [f64],
    cfg: &'a TerConfig,
}

impl Problem<'_> {
    fn distance(&self, hyp: &[u32]) -> f64 {
        weighted_edit_distance(hyp, self.reference, self.costs, self.cfg.base_cost)
    }

    /// Optimal alignment of `hyp` against the reference. Returns which hyp
    /// and reference tokens are exact matches, and for every reference
    /// position `j` the number of hyp tokens consumed before `j` is reached.
    fn alignment(&self, hyp: &[u32]) -> (Vec<bool>, Vec<bool>, Vec<usize>) {
        let (n, m) = (hyp.len(), self.reference.len());
        let extra = self.cfg.base_cost;
        let mut d = vec![vec![0.0; m + 1]; n + 1];
        for i in 1..=n {
            d[i][0] = i as f64 * extra;
        }
        for j in 1..=m {
            d[0][j] = d[0][j - 1] + self.costs[j - 1];
        }
        for i in 1..=n {
            for j in 1..=m {
                let sub = if hyp[i - 1] == self.reference[j - 1] { 0.0 } else { self.costs[j - 1] };
                d[i][j] = (d[i - 1][j - 1] + sub).min(d[i - 1][j] + extra).min(d[i][j - 1] + self.costs[j - 1]);
            }
        }
        let mut hyp_ok = vec![false; n];
        let mut ref_ok = vec![false; m];
        let mut cursor = vec![n; m + 1];
        let (mut i, mut j) = (n, m);
        while i > 0 || j > 0 {
            if i > 0 && j > 0 {
                let same = hyp[i - 1] == self.reference[j - 1];
                let sub = if same { 0.0 } else { self.costs[j - 1] };
                if d[i][j] == d[i - 1][j - 1] + sub {
                    hyp_ok[i - 1] = same;
                    ref_ok[j - 1] = same;
                    cursor[j - 1] = i - 1;
                    i -= 1;
                    j -= 1;
                    continue;
                }
            }
            if j > 0 && (i == 0 || d[i][j] == d[i][j - 1] + self.costs[j - 1]) {
                cursor[j - 1] = i;
                j -= 1;
            } else {
                i -= 1;
            }
        }
        (hyp_ok, ref_ok, cursor)
    }

    /// Greedy best-improvement search over block shifts. Candidates follow
    /// the usual TER restrictions: the block must occur contiguously in the
    /// reference, must not be fully matched already, and is moved next to
    /// the hyp token aligned just before one of its reference occurrences.
    /// Returns (final hyp, shifts, edit distance).
    fn greedy(&self, hyp: &[u32]) -> (Vec<u32>, usize, f64) {
        let max_len = self.cfg.max_shift_size;
        let mut occurrences: HashMap<&[u32], Vec<usize>> = HashMap::new();
        for n in 1..=max_len.min(self.reference.len()) {
            for (j, w) in self.reference.windows(n).enumerate() {
                occurrences.entry(w).or_default().push(j);
            }
        }

        let mut cur = hyp.to_vec();
        let mut cur_cost = self.distance(&cur);
        let mut shifts = 0;
        for _ in 0..self.cfg.max_shift_iterations {
            let n = cur.len();
            let (hyp_ok, ref_ok, cursor) = self.alignment(&cur);
            let mut best: Option<(f64, Vec<u32>)> = None;
            for start in 0..n {
                for len in 1..=max_len.min(n - start) {
                    let Some(places) = occurrences.get(&cur[start..start + len]) else {
                        break;
                    };
                    if hyp_ok[start..start + len].iter().all(|&ok| ok) {
                        continue;
                    }
                    for &j in places {
                        if ref_ok[j..j + len].iter().all(|&ok| ok) {
                            continue;
                        }
                        let at = cursor[j];
                        let dest = if at <= start {
                            at
                        } else if at >= start + len {
                            at - len
                        } else {
                            continue;
                        };
                        if dest == start || dest.abs_diff(start) > self.cfg.max_shift_distance {
                            continue;
                        }
                        let cand = apply_shift(&cur, start, len, dest);
                        let cost = self.distance(&cand);
                        if best.as_ref().is_none_or(|(b, _)| cost < *b) {
                            best = Some((cost, cand));
                        }
                    }
                }
            }
            match best {
                Some((cost, cand)) if cur_cost - cost >= self.cfg.base_cost && cost < cur_cost => {
                    cur = cand;
                    cur_cost = cost;
                    shifts += 1;
                }
                _ => break,
            }
        }
        (cur, shifts, cur_cost)
    }

    /// Breadth-first search over all shift sequences, pruned by `bound`
    /// (the best total cost found so far). Returns (shifts, distance).
    fn exact(&self, hyp: &[u32], bound: (usize, f64)) -> (usize, f64) {
        let shift_cost = self.cfg.base_cost;
        let total = |(s, d): (usize, f64)| s as f64 * shift_cost + d;
        let mut best = bound;
        let mut seen: HashSet<Vec<u32>> = HashSet::from([hyp.to_vec()]);
        let mut frontier = vec![hyp.to_vec()];
        let mut depth = 0usize;
        while !frontier.is_empty() && ((depth + 1) as f64) * shift_cost < total(best) {
            depth += 1;
            let mut next = Vec::new();
            for state in &frontier {
                for cand in all_shifts(state) {
                    if seen.contains(&cand) {
                        continue;
                    }
                    let d = self.distance(&cand);
                    if total((depth, d)) < total(best) {
                        best = (depth, d);
                    }
                    seen.insert(cand.clone());
                    next.push(cand);
                }
            }
            frontier = next;
        }
        best
    }
}

fn intern<'a, S: AsRef<str>>(hyp: &'a [S], reference: &'a [S]) -> (Vec<u32>, Vec<u32>) {
    let mut ids: HashMap<&'a str, u32> = HashMap::new();
    let mut map = |toks: &'a [S]| -> Vec<u32> {
        toks.iter()
            .map(|t| {
                let next = ids.len() as u32;
                *ids.entry(t.as_ref()).or_insert(next)
            })
            .collect::<Vec<_>>()
    };
    let r = map(reference);
    let h = map(hyp);
    (h, r)
}

/// Terminology-weighted TER of one hypothesis.
pub fn term_edit_rate<S: AsRef<str>>(
    hyp: &[S],
    reference: &[S],
    term_positions: &BTreeSet<usize>,
    cfg: &TerConfig,
) -> Result<TerResult> {
    if reference.is_empty() {
        return Err(Error::invalid("empty reference"));
    }
    if let Some(&p) = term_positions.iter().find(|&&p| p >= reference.len()) {
        return Err(Error::invalid(format!(
            "term position {p} outside reference of length {}",
            reference.len()
        )));
    }
    if !(cfg.term_cost > 0.0 && cfg.base_cost > 0.0) {
        return Err(Error::Config("edit costs must be positive".into()));
    }

    let (h, r) = intern(hyp, reference);
    let costs: Vec<f64> = (0..r.len())
        .map(|j| if term_positions.contains(&j) { cfg.term_cost } else { cfg.base_cost })
        .collect();
    let ref_weight: f64 = costs.iter().sum();
    let problem = Problem {
        reference: &r,
        costs: &costs,
        cfg,
    };

    let (shifts, distance) = if cfg.shifts {
        let (_, shifts, distance) = problem.greedy(&h);
        if h.len() <= cfg.exact_search_limit {
            problem.exact(&h, (shifts, distance))
        } else {
            (shifts, distance)
        }
    } else {
        (0, problem.distance(&h))
    };
    let edit_cost = shifts as f64 * cfg.base_cost + distance;
    Ok(TerResult {
        edit_cost,
        ref_weight,
        shifts,
        ter: edit_cost / ref_weight,
    })
}

/// Greedy-only variant, kept for diagnostics and comparison.
pub fn term_edit_rate_greedy<S: AsRef<str>>(
    hyp: &[S],
    reference: &[S],
    term_positions: &BTreeSet<usize>,
    cfg: &TerConfig,
) -> Result<TerResult> {
    let cfg = TerConfig {
        exact_search_limit: 0,
        ..*cfg
    };
    term_edit_rate(hyp, reference, term_positions, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn ter(h: &str, r: &str, terms: &[usize], shifts: bool) -> TerResult {
        let cfg = TerConfig { shifts, ..TerConfig::default() };
        term_edit_rate(&toks(h), &toks(r), &terms.iter().copied().collect(), &cfg).unwrap()
    }

    #[test]
    fn identity() {
        let r = ter("a b c", "a b c", &[1], true);
        assert_eq!(r.ter, 0.0);
        assert_eq!(1.0 - r.ter, 1.0);
    }

    #[test]
    fn substitution_at_term() {
        let r = ter("a x", "a T", &[1], true);
        assert_eq!(r.edit_cost, 2.0);
        assert_eq!(r.ref_weight, 3.0);
        assert!((r.ter - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_hypothesis() {
        let r = ter("", "a b", &[], true);
        assert_eq!(r.ter, 1.0);
    }

    #[test]
    fn shift_beats_edits() {
        let no = ter("c d a b", "a b c d", &[], false);
        let yes = ter("c d a b", "a b c d", &[], true);
        assert_eq!(no.edit_cost, 4.0);
        assert_eq!(yes.edit_cost, 1.0);
        assert_eq!(yes.shifts, 1);
    }

    #[test]
    fn long_sentence_shift() {
        let h = "we saw the new chip in the shop yesterday at noon really";
        let r = "yesterday at noon we saw the new chip in the shop really";
        let g = ter(h, r, &[], true);
        assert_eq!(g.shifts, 1);
        assert_eq!(g.edit_cost, 1.0);
    }

    #[test]
    fn greedy_is_not_always_optimal() {
        let h = ["2", "0", "3", "4"];
        let r = ["4", "3", "1", "2", "1"];
        let terms: BTreeSet<usize> = [0, 1, 4].into();
        let cfg = TerConfig::default();
        let greedy = term_edit_rate_greedy(&h, &r, &terms, &cfg).unwrap();
        let full = term_edit_rate(&h, &r, &terms, &cfg).unwrap();
        assert_eq!(greedy.edit_cost, 6.0);
        assert_eq!(full.edit_cost, 5.0);
    }

    #[test]
    fn errors() {
        let cfg = TerConfig::default();
        assert!(term_edit_rate::<&str>(&["a"], &[], &BTreeSet::new(), &cfg).is_err());
        assert!(term_edit_rate(&["a"], &["a"], &[3].into(), &cfg).is_err());
    }

    #[test]
    fn dp_matches_plain_levenshtein_for_unit_costs() {
        let d = weighted_edit_distance(&toks("k i t t e n"), &toks("s i t t i n g"), &[1.0; 7], 1.0);
        assert_eq!(d, 3.0);
    }

    #[test]
    fn apply_shift_positions() {
        assert_eq!(apply_shift(&[0, 1, 2, 3], 0, 2, 2), [2, 3, 0, 1]);
        assert_eq!(apply_shift(&[0, 1, 2, 3], 3, 1, 0), [3, 0, 1, 2]);
    }
}
