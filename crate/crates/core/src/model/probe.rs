//! Congruent versus incongruent decoding: the same test set decoded with
//! each sample's own video and with a mismatched one.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::data::{Example, Vocab};
use super::decode::{beam_decode, BeamConfig};
use super::frames::FeatureSequence;
use super::network::VmtModel;
use crate::metrics::{evaluate, EvalConfig, EvalPair, EvalReport, TermAnnotation};
use crate::{Error, Result};

/// A random permutation with no fixed points, by rejection sampling.
pub fn derangement<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::invalid(format!("no derangement exists for {n} item(s)")));
    }
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        p.shuffle(rng);
        if p.iter().enumerate().all(|(i, &j)| i != j) {
            return Ok(p);
        }
    }
}

/// A test sample with its reference tokens and term annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeItem {
    pub example: Example,
    pub reference: Vec<String>,
    pub annotations: Vec<TermAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeDelta {
    pub bleu: f64,
    pub exact_match: Option<f64>,
    pub window_overlap_2: Option<f64>,
    pub window_overlap_3: Option<f64>,
    pub one_minus_term: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub congruent: EvalReport,
    pub incongruent: EvalReport,
    /// Congruent minus incongruent.
    pub delta: ProbeDelta,
    /// `assignment[i]` is the item whose video sample `i` was paired with.
    pub assignment: Vec<usize>,
}

/// Decodes every item with the given features and scores the output.
pub fn decode_and_evaluate<'a, F>(
    model: &VmtModel,
    tgt_vocab: &Vocab,
    items: &'a [ProbeItem],
    features: F,
    beam: &BeamConfig,
    eval: &EvalConfig,
) -> Result<(Vec<Vec<String>>, EvalReport)>
where
    F: Fn(usize) -> &'a FeatureSequence,
{
    let mut pairs = Vec::with_capacity(items.len());
    let mut hyps = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let h = beam_decode(model, &item.example.src, features(i), beam)?;
        let tokens = tgt_vocab.decode(&h.tokens);
        hyps.push(tokens.clone());
        pairs.push(EvalPair {
            record_id: item.example.id.clone(),
            hyp_tokens: tokens,
            ref_tokens: item.reference.clone(),
            annotations: item.annotations.clone(),
        });
    }
    Ok((hyps, evaluate(&pairs, eval)?))
}

pub fn incongruent_probe(
    model: &VmtModel,
    tgt_vocab: &Vocab,
    items: &[ProbeItem],
    seed: u64,
    beam: &BeamConfig,
    eval: &EvalConfig,
) -> Result<ProbeReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assignment = derangement(items.len(), &mut rng)?;
    let (_, congruent) = decode_and_evaluate(model, tgt_vocab, items, |i| &items[i].example.features, beam, eval)?;
    let (_, incongruent) = decode_and_evaluate(
        model,
        tgt_vocab,
        items,
        |i| &items[assignment[i]].example.features,
        beam,
        eval,
    )?;
    let term = |f: fn(&crate::metrics::TermScores) -> f64| match (&congruent.terms, &incongruent.terms) {
        (Some(a), Some(b)) => Some(f(a) - f(b)),
        _ => None,
    };
    let delta = ProbeDelta {
        bleu: congruent.bleu.bleu - incongruent.bleu.bleu,
        exact_match: term(|t| t.exact_match),
        window_overlap_2: term(|t| t.window_overlap_2),
        window_overlap_3: term(|t| t.window_overlap_3),
        one_minus_term: term(|t| t.one_minus_term),
    };
    Ok(ProbeReport {
        congruent,
        incongruent,
        delta,
        assignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_item_has_no_derangement() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(derangement(1, &mut rng).is_err());
        assert!(derangement(0, &mut rng).is_err());
        assert_eq!(derangement(2, &mut rng).unwrap(), vec![1, 0]);
    }

    proptest! {
        #[test]
        fn derangement_has_no_fixed_points(n in 2usize..60, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = derangement(n, &mut rng).unwrap();
            prop_assert!(p.iter().enumerate().all(|(i, &j)| i != j));
            let mut sorted = p.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        }
    }
}
