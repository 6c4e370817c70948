//! Surface and terminology-targeted translation metrics.

mod bleu;
mod term;
mod ter;
mod tokenize;

use std::collections::{BTreeSet, HashSet};

use serde::Serialize;

pub use bleu::{bleu_corpus, BleuReport};
pub use term::{
    exact_match, find_subsequence, first_matching_variant, read_annotations, window_overlap, window_term_score,
    write_annotations, EvalPair, ExactMatch, TermAnnotation, TermOutcome,
};
pub use ter::{term_edit_rate, term_edit_rate_greedy, weighted_edit_distance, TerConfig, TerResult};
pub use tokenize::{is_cjk, tokenize_zh, Tokenizer};

use crate::Result;

const DEFAULT_STOPWORDS_EN: &str = include_str!("../../data/stopwords_en.txt");
const DEFAULT_STOPWORDS_ZH: &str = include_str!("../../data/stopwords_zh.txt");

/// Parses a one-token-per-line stopword list.
pub fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect()
}

/// The bundled English and Chinese stopword lists.
pub fn default_stopwords() -> HashSet<String> {
    let mut s = parse_stopwords(DEFAULT_STOPWORDS_EN);
    s.extend(parse_stopwords(DEFAULT_STOPWORDS_ZH));
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TermCounts {
    pub terms: usize,
    pub correct: usize,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermScores {
    pub exact_match: f64,
    pub window_overlap_2: f64,
    pub window_overlap_3: f64,
    /// 1 - TERm, unclamped.
    pub one_minus_term: f64,
    pub counts: TermCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordScores {
    pub record_id: String,
    pub terms: usize,
    pub correct: usize,
    pub window_overlap_2: Option<f64>,
    pub window_overlap_3: Option<f64>,
    pub term: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// Absent when no pair carries an annotation.
    pub terms: Option<TermScores>,
    pub bleu: BleuReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_record: Option<Vec<RecordScores>>,
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub stopwords: HashSet<String>,
    pub ter: TerConfig,
    pub per_record: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            stopwords: default_stopwords(),
            ter: TerConfig::default(),
            per_record: false,
        }
    }
}

/// Reference positions covered by the annotated terms of a pair: for each
/// annotation, the first reference occurrence of any of its variants.
pub fn term_positions(pair: &EvalPair) -> BTreeSet<usize> {
    let mut pos = BTreeSet::new();
    for ann in &pair.annotations {
        if let Some((variant, at)) = first_matching_variant(&pair.ref_tokens, ann) {
            pos.extend(at..at + variant.len());
        }
    }
    pos
}

/// Runs every metric over tokenized pairs. Term metrics cover the annotated
/// pairs only; TERm is aggregated as total weighted edits over total
/// weighted reference length.
pub fn evaluate(pairs: &[EvalPair], config: &EvalConfig) -> Result<EvalReport> {
    let hyps: Vec<&[String]> = pairs.iter().map(|p| p.hyp_tokens.as_slice()).collect();
    let refs: Vec<&[String]> = pairs.iter().map(|p| p.ref_tokens.as_slice()).collect();
    let bleu = bleu_corpus(&hyps, &refs)?;

    let annotated: Vec<&EvalPair> = pairs.iter().filter(|p| !p.annotations.is_empty()).collect();
    let mut per_record = Vec::new();
    let mut terms = None;
    if !annotated.is_empty() {
        let owned: Vec<EvalPair> = annotated.iter().map(|p| (*p).clone()).collect();
        let em = exact_match(&owned)?;
        let wo2 = window_overlap(&owned, 2, &config.stopwords)?;
        let wo3 = window_overlap(&owned, 3, &config.stopwords)?;
        let (mut edits, mut weight) = (0.0, 0.0);
        for p in &owned {
            let t = term_edit_rate(&p.hyp_tokens, &p.ref_tokens, &term_positions(p), &config.ter)?;
            edits += t.edit_cost;
            weight += t.ref_weight;
            if config.per_record {
                let n = p.annotations.len() as f64;
                let wo = |k| {
                    p.annotations
                        .iter()
                        .map(|a| window_term_score(p, a, k, &config.stopwords))
                        .sum::<f64>()
                        / n
                };
                per_record.push(RecordScores {
                    record_id: p.record_id.clone(),
                    terms: p.annotations.len(),
                    correct: p
                        .annotations
                        .iter()
                        .filter(|a| first_matching_variant(&p.hyp_tokens, a).is_some())
                        .count(),
                    window_overlap_2: Some(wo(2)),
                    window_overlap_3: Some(wo(3)),
                    term: Some(t.ter),
                });
            }
        }
        terms = Some(TermScores {
            exact_match: em.rate,
            window_overlap_2: wo2,
            window_overlap_3: wo3,
            one_minus_term: 1.0 - edits / weight,
            counts: TermCounts {
                terms: em.total,
                correct: em.correct,
                pairs: owned.len(),
            },
        });
    }
    if config.per_record {
        for p in pairs.iter().filter(|p| p.annotations.is_empty()) {
            per_record.push(RecordScores {
                record_id: p.record_id.clone(),
                terms: 0,
                correct: 0,
                window_overlap_2: None,
                window_overlap_3: None,
                term: None,
            });
        }
    }

    Ok(EvalReport {
        terms,
        bleu,
        per_record: config.per_record.then_some(per_record),
    })
}
