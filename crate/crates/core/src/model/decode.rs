//! Greedy and beam-search decoding.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::data::{Batch, BOS, EOS, PAD, UNK};
use super::frames::FeatureSequence;
use super::network::VmtModel;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamConfig {
    pub beam: usize,
    pub length_penalty: f64,
    /// Output token budget; defaults to `2 * source length + 10`.
    pub max_len: Option<usize>,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam: 4,
            length_penalty: 1.0,
            max_len: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hypothesis {
    /// Output ids without the end marker.
    pub tokens: Vec<u32>,
    /// Sum of token log-probabilities, end marker included when present.
    pub log_prob: f64,
    /// `log_prob / length^length_penalty`.
    pub score: f64,
    /// Set when decoding stopped at `max_len` without an end marker.
    pub truncated: bool,
}

fn banned(t: usize) -> bool {
    t == PAD as usize || t == BOS as usize || t == UNK as usize
}

fn normalise(log_prob: f64, len: usize, penalty: f64) -> f64 {
    log_prob / (len.max(1) as f64).powf(penalty)
}

fn budget(model: &VmtModel, src_len: usize, max_len: Option<usize>) -> usize {
    max_len
        .unwrap_or(2 * src_len + 10)
        .min(model.config.max_text_len - 1)
        .max(1)
}

/// Orders hypotheses by score, then token sequence, best first.
fn better(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens))
}

/// Length-normalised beam search. Candidates are ranked by cumulative
/// log-probability, ties broken by token id then beam index. Search stops
/// once `beam` hypotheses have ended and no live prefix, normalised at its
/// current length, scores above the worst of them.
pub fn beam_decode(model: &VmtModel, src: &[u32], features: &FeatureSequence, cfg: &BeamConfig) -> Result<Hypothesis> {
    if cfg.beam == 0 {
        return Err(Error::Config("beam must be at least 1".into()));
    }
    let feats = features.sampled(model.config.max_frames)?;
    let memory = model.encode_one(src, &feats.data)?;
    let max_len = budget(model, src.len(), cfg.max_len);

    let mut live: Vec<(Vec<u32>, f64)> = vec![(vec![BOS], 0.0)];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        let prefixes: Vec<Vec<u32>> = live.iter().map(|(p, _)| p.clone()).collect();
        let lp = model.next_log_probs(&memory, &prefixes)?;
        let mut cands: Vec<(f64, u32, usize)> = Vec::with_capacity(live.len() * lp.ncols());
        for (b, (_, base)) in live.iter().enumerate() {
            for (t, &l) in lp.row(b).iter().enumerate() {
                if !banned(t) {
                    cands.push((base + l, t as u32, b));
                }
            }
        }
        cands.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

        let mut next = Vec::with_capacity(cfg.beam);
        for (rank, &(score, t, b)) in cands.iter().enumerate().take(2 * cfg.beam) {
            if t == EOS {
                // End markers only count when they rank among the top `beam`.
                if rank < cfg.beam {
                    let tokens = live[b].0[1..].to_vec();
                    let len = tokens.len() + 1;
                    finished.push(Hypothesis {
                        tokens,
                        log_prob: score,
                        score: normalise(score, len, cfg.length_penalty),
                        truncated: false,
                    });
                }
            } else if next.len() < cfg.beam {
                let mut p = live[b].0.clone();
                p.push(t);
                next.push((p, score));
            }
        }
        finished.sort_by(better);
        finished.truncate(cfg.beam);
        if next.is_empty() {
            live.clear();
            break;
        }
        if finished.len() >= cfg.beam {
            let worst = finished[finished.len() - 1].score;
            let best_live = next
                .iter()
                .map(|(p, lp)| normalise(*lp, p.len() - 1, cfg.length_penalty))
                .fold(f64::NEG_INFINITY, f64::max);
            if best_live <= worst {
                live.clear();
                break;
            }
        }
        live = next;
    }
    if finished.is_empty() {
        finished.extend(live.into_iter().map(|(p, lp)| {
            let tokens = p[1..].to_vec();
            Hypothesis {
                score: normalise(lp, tokens.len(), cfg.length_penalty),
                tokens,
                log_prob: lp,
                truncated: true,
            }
        }));
    }
    finished.sort_by(better);
    finished
        .into_iter()
        .next()
        .ok_or_else(|| Error::invalid("decoding produced no hypothesis"))
}

/// Argmax decoding, lowest token id on ties.
pub fn greedy_decode(model: &VmtModel, src: &[u32], features: &FeatureSequence, max_len: Option<usize>) -> Result<Hypothesis> {
    let feats = features.sampled(model.config.max_frames)?;
    let memory = model.encode_one(src, &feats.data)?;
    let max_len = budget(model, src.len(), max_len);
    let mut prefix = vec![BOS];
    let mut log_prob = 0.0;
    for _ in 0..max_len {
        let lp = model.next_log_probs(&memory, std::slice::from_ref(&prefix))?;
        let (best, l) = lp
            .row(0)
            .iter()
            .enumerate()
            .filter(|(t, _)| !banned(*t))
            .fold((usize::MAX, f64::NEG_INFINITY), |acc, (t, &l)| if l > acc.1 { (t, l) } else { acc });
        log_prob += l;
        if best == EOS as usize {
            let tokens = prefix[1..].to_vec();
            return Ok(Hypothesis {
                score: normalise(log_prob, tokens.len() + 1, 1.0),
                tokens,
                log_prob,
                truncated: false,
            });
        }
        prefix.push(best as u32);
    }
    let tokens = prefix[1..].to_vec();
    Ok(Hypothesis {
        score: normalise(log_prob, tokens.len(), 1.0),
        tokens,
        log_prob,
        truncated: true,
    })
}

/// Decodes every sample of a batch independently.
pub fn translate_batch(model: &VmtModel, batch: &Batch, cfg: &BeamConfig) -> Result<Vec<Hypothesis>> {
    (0..batch.len())
        .map(|i| beam_decode(model, &batch.src_tokens(i)?, &batch.features[i], cfg))
        .collect()
}
