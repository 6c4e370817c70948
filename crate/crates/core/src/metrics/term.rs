use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// An ambiguous source term and its acceptable target renderings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermAnnotation {
    pub record_id: String,
    pub src_term: Vec<String>,
    pub tgt_variants: Vec<Vec<String>>,
}

impl TermAnnotation {
    pub fn validate(&self) -> Result<()> {
        if self.tgt_variants.is_empty() || self.tgt_variants.iter().any(Vec::is_empty) {
            return Err(Error::invalid(format!(
                "annotation for `{}` needs non-empty target variants",
                self.record_id
            )));
        }
        Ok(())
    }
}

/// Reads one annotation per JSONL line; blank lines are skipped.
pub fn read_annotations<R: BufRead>(reader: R) -> Result<Vec<TermAnnotation>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ann: TermAnnotation = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: i + 1,
            message: e.to_string(),
        })?;
        ann.validate()?;
        out.push(ann);
    }
    Ok(out)
}

pub fn write_annotations<W: Write>(mut out: W, annotations: &[TermAnnotation]) -> Result<()> {
    for a in annotations {
        serde_json::to_writer(&mut out, a)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalPair {
    pub record_id: String,
    pub hyp_tokens: Vec<String>,
    pub ref_tokens: Vec<String>,
    pub annotations: Vec<TermAnnotation>,
}

/// First position where `needle` occurs as a contiguous run of `hay`.
pub fn find_subsequence<S: AsRef<str>>(hay: &[S], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    (0..=hay.len() - needle.len()).find(|&i| {
        hay[i..i + needle.len()]
            .iter()
            .zip(needle)
            .all(|(h, n)| h.as_ref() == n)
    })
}

/// The first variant (in annotation order) present in `tokens`, with its
/// position.
pub fn first_matching_variant<'a>(tokens: &[String], ann: &'a TermAnnotation) -> Option<(&'a [String], usize)> {
    ann.tgt_variants
        .iter()
        .find_map(|v| find_subsequence(tokens, v).map(|p| (v.as_slice(), p)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TermOutcome {
    pub record_id: String,
    pub term: usize,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactMatch {
    pub rate: f64,
    pub correct: usize,
    pub total: usize,
    pub outcomes: Vec<TermOutcome>,
}

pub fn exact_match(pairs: &[EvalPair]) -> Result<ExactMatch> {
    let mut outcomes = Vec::new();
    for p in pairs {
        for (i, ann) in p.annotations.iter().enumerate() {
            ann.validate()?;
            outcomes.push(TermOutcome {
                record_id: p.record_id.clone(),
                term: i,
                correct: first_matching_variant(&p.hyp_tokens, ann).is_some(),
            });
        }
    }
    if outcomes.is_empty() {
        return Err(Error::invalid("no terms"));
    }
    let correct = outcomes.iter().filter(|o| o.correct).count();
    Ok(ExactMatch {
        rate: correct as f64 / outcomes.len() as f64,
        correct,
        total: outcomes.len(),
        outcomes,
    })
}

/// Up to `k` non-stopword tokens on each side of `tokens[start..end]`.
fn context_window<'a>(tokens: &'a [String], start: usize, end: usize, k: usize, stop: &HashSet<String>) -> Vec<&'a str> {
    let keep = |t: &&String| !stop.contains(*t);
    let left = tokens[..start].iter().rev().filter(keep).take(k);
    let right = tokens[end..].iter().filter(keep).take(k);
    left.chain(right).map(String::as_str).collect()
}

/// Window-overlap score of one annotated term in one pair.
pub fn window_term_score(pair: &EvalPair, ann: &TermAnnotation, k: usize, stop: &HashSet<String>) -> f64 {
    let Some((variant, hyp_pos)) = first_matching_variant(&pair.hyp_tokens, ann) else {
        return 0.0;
    };
    let ref_pos = find_subsequence(&pair.ref_tokens, variant);
    let (ref_variant, ref_pos) = match ref_pos {
        Some(p) => (variant, p),
        None => match first_matching_variant(&pair.ref_tokens, ann) {
            Some(found) => found,
            None => return 0.0,
        },
    };
    let hyp_win = context_window(&pair.hyp_tokens, hyp_pos, hyp_pos + variant.len(), k, stop);
    let ref_win = context_window(&pair.ref_tokens, ref_pos, ref_pos + ref_variant.len(), k, stop);

    let mut avail: HashMap<&str, usize> = HashMap::new();
    for t in &hyp_win {
        *avail.entry(t).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for t in &ref_win {
        if let Some(c) = avail.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    overlap as f64 / ref_win.len().max(1) as f64
}

/// Mean window-overlap score over all annotated terms.
pub fn window_overlap(pairs: &[EvalPair], k: usize, stop: &HashSet<String>) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for p in pairs {
        for ann in &p.annotations {
            ann.validate()?;
            sum += window_term_score(p, ann, k, stop);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("no terms"));
    }
    Ok(sum / n as f64)
}
