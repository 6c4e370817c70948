use std::collections::HashMap;

use serde::Serialize;

use crate::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BleuReport {
    /// Score in [0, 100].
    pub bleu: f64,
    /// Smoothed modified precisions for n = 1..4, as fractions.
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    /// Clipped matches and candidate counts per order.
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU with a single reference per hypothesis and exponential
/// smoothing of zero-match orders (each successive zero count halves the
/// pseudo-precision). Inputs are already tokenized.
pub fn bleu_corpus<H, R>(hyps: &[H], refs: &[R]) -> Result<BleuReport>
where
    H: AsRef<[String]>,
    R: AsRef<[String]>,
{
    if hyps.is_empty() {
        return Err(Error::invalid("BLEU needs at least one segment"));
    }
    if hyps.len() != refs.len() {
        return Err(Error::invalid(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }

    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        let (h, r) = (h.as_ref(), r.as_ref());
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(r, n);
            totals[n - 1] += h.len().saturating_sub(n - 1);
            matches[n - 1] += hc
                .iter()
                .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }

    let mut precisions = [0.0; MAX_ORDER];
    let mut smooth = 1.0;
    for n in 0..MAX_ORDER {
        // An order with no candidates leaves its precision (and BLEU) at 0.
        if totals[n] == 0 {
            break;
        }
        if matches[n] == 0 {
            smooth *= 2.0;
            precisions[n] = 1.0 / (smooth * totals[n] as f64);
        } else {
            precisions[n] = matches[n] as f64 / totals[n] as f64;
        }
    }

    let brevity_penalty = if hyp_len >= ref_len {
        1.0
    } else if hyp_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let bleu = if precisions.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * brevity_penalty * log_mean.exp()
    };

    Ok(BleuReport {
        bleu,
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
        matches,
        totals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identity_is_100() {
        let refs = [toks("the cat sat on the mat"), toks("a b c d e")];
        let r = bleu_corpus(&refs, &refs).unwrap();
        assert_eq!(r.bleu, 100.0);
        assert_eq!(r.brevity_penalty, 1.0);
    }

    #[test]
    fn short_hypothesis() {
        let r = bleu_corpus(&[toks("a b c d")], &[toks("a b c d e")]).unwrap();
        assert_eq!(r.precisions, [1.0; 4]);
        assert_eq!(r.totals, [4, 3, 2, 1]);
        let expected = 100.0 * (1.0f64 - 5.0 / 4.0).exp();
        assert!((r.bleu - expected).abs() < 1e-12);
        assert!((r.bleu - 77.880).abs() < 1e-3);
    }

    #[test]
    fn empty_hypotheses() {
        let r = bleu_corpus(&[Vec::<String>::new(), vec![]], &[toks("a b"), toks("c")]).unwrap();
        assert_eq!(r.bleu, 0.0);
    }

    #[test]
    fn exponential_smoothing() {
        // 1-grams: 5/6 match; 2-grams: 2/5; 3-, 4-grams: none.
        let r = bleu_corpus(&[toks("a b x c d e")], &[toks("a b c d e f")]).unwrap();
        assert_eq!(r.matches, [5, 3, 1, 0]);
        assert_eq!(r.precisions[3], 1.0 / (2.0 * 3.0));
        let r = bleu_corpus(&[toks("a x b y c z")], &[toks("a b c q r s")]).unwrap();
        assert_eq!(r.matches, [3, 0, 0, 0]);
        assert_eq!(r.precisions[1], 1.0 / (2.0 * 5.0));
        assert_eq!(r.precisions[2], 1.0 / (4.0 * 4.0));
        assert_eq!(r.precisions[3], 1.0 / (8.0 * 3.0));
    }

    #[test]
    fn clipping() {
        let r = bleu_corpus(&[toks("the the the the")], &[toks("the cat")]).unwrap();
        assert_eq!(r.matches[0], 1);
    }

    #[test]
    fn errors() {
        assert!(bleu_corpus::<Vec<String>, Vec<String>>(&[], &[]).is_err());
        assert!(bleu_corpus(&[toks("a")], &[toks("a"), toks("b")]).is_err());
    }

    #[test]
    fn score_is_bp_times_geometric_mean() {
        let r = bleu_corpus(
            &[toks("a b c d e f g"), toks("x y z w")],
            &[toks("a b c d f g h i"), toks("x y w z")],
        )
        .unwrap();
        let gm = r.precisions.iter().product::<f64>().powf(0.25);
        assert!((r.bleu - 100.0 * r.brevity_penalty * gm).abs() < 1e-9);
    }
}
