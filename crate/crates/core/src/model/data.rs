//! Vocabularies, encoded examples and padded batches.

use std::collections::{BTreeSet, HashMap};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::frames::FeatureSequence;
use crate::corpus::CorpusRecord;
use crate::metrics::Tokenizer;
use crate::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Special tokens followed by every distinct token in sorted order.
    pub fn build<'a, I, S>(sequences: I) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut seen = BTreeSet::new();
        for seq in sequences {
            for t in seq {
                if !SPECIALS.contains(&t.as_ref()) {
                    seen.insert(t.as_ref().to_string());
                }
            }
        }
        let tokens = SPECIALS.iter().map(|s| s.to_string()).chain(seen).collect::<Vec<_>>();
        tokens.into()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Decodes ids, dropping special tokens other than `<unk>`.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| i != PAD && i != BOS && i != EOS)
            .map(|&i| self.tokens.get(i as usize).cloned().unwrap_or_else(|| SPECIALS[UNK as usize].into()))
            .collect()
    }
}

/// One encoded training or test sample. `tgt` excludes the end marker.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub src: Vec<u32>,
    pub tgt: Vec<u32>,
    pub features: FeatureSequence,
}

/// How raw record text is split into model tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TextSpec {
    pub src_tokenizer: Tokenizer,
    pub tgt_tokenizer: Tokenizer,
}

impl TextSpec {
    pub fn src_tokens(&self, text: &str) -> Vec<String> {
        self.src_tokenizer.tokenize(text)
    }

    pub fn tgt_tokens(&self, text: &str) -> Vec<String> {
        self.tgt_tokenizer.tokenize(text)
    }
}

/// Pairs records with their features and encodes both sides, truncating
/// text to `max_text_len` (target keeps one slot for the end marker).
pub fn encode_records(
    records: &[CorpusRecord],
    features: &HashMap<String, FeatureSequence>,
    src_vocab: &Vocab,
    tgt_vocab: &Vocab,
    text: TextSpec,
    max_text_len: usize,
) -> Result<Vec<Example>> {
    records
        .iter()
        .map(|r| {
            let feats = features
                .get(&r.id)
                .ok_or_else(|| Error::invalid(format!("no features for record `{}`", r.id)))?;
            let mut src = src_vocab.encode(&text.src_tokens(&r.src));
            src.truncate(max_text_len);
            let mut tgt = tgt_vocab.encode(&text.tgt_tokens(&r.tgt));
            tgt.truncate(max_text_len.saturating_sub(1));
            Ok(Example {
                id: r.id.clone(),
                src,
                tgt,
                features: feats.clone(),
            })
        })
        .collect()
}

/// Padded batch. Rows of `src_ids` and `tgt_ids` are right-padded with
/// [`PAD`]; each target row ends with [`EOS`] before its padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Vec<String>,
    pub src_ids: Array2<u32>,
    pub tgt_ids: Array2<u32>,
    /// Already reduced by frame sampling.
    pub features: Vec<FeatureSequence>,
}

fn pad_rows(rows: &[Vec<u32>], width: usize) -> Array2<u32> {
    let mut m = Array2::from_elem((rows.len(), width), PAD);
    for (i, r) in rows.iter().enumerate() {
        for (j, &t) in r.iter().enumerate() {
            m[[i, j]] = t;
        }
    }
    m
}

/// Length of the non-pad prefix; errors if a pad is followed by a token.
fn prefix_len(row: ndarray::ArrayView1<u32>) -> Result<usize> {
    let n = row.iter().position(|&t| t == PAD).unwrap_or(row.len());
    if row.iter().skip(n).any(|&t| t != PAD) {
        return Err(Error::invalid("padding must be trailing"));
    }
    Ok(n)
}

impl Batch {
    pub fn from_examples(examples: &[&Example], max_frames: usize) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let src: Vec<Vec<u32>> = examples.iter().map(|e| e.src.clone()).collect();
        let tgt: Vec<Vec<u32>> = examples
            .iter()
            .map(|e| e.tgt.iter().copied().chain([EOS]).collect())
            .collect();
        let src_w = src.iter().map(Vec::len).max().unwrap_or(0);
        let tgt_w = tgt.iter().map(Vec::len).max().unwrap_or(0);
        let features = examples
            .iter()
            .map(|e| e.features.sampled(max_frames))
            .collect::<Result<_>>()?;
        Ok(Self {
            ids: examples.iter().map(|e| e.id.clone()).collect(),
            src_ids: pad_rows(&src, src_w),
            tgt_ids: pad_rows(&tgt, tgt_w),
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn src_tokens(&self, i: usize) -> Result<Vec<u32>> {
        let row = self.src_ids.row(i);
        let n = prefix_len(row)?;
        Ok(row.iter().take(n).copied().collect())
    }

    /// Target tokens including the end marker.
    pub fn tgt_tokens(&self, i: usize) -> Result<Vec<u32>> {
        let row = self.tgt_ids.row(i);
        let n = prefix_len(row)?;
        Ok(row.iter().take(n).copied().collect())
    }

    /// The same batch with `extra` more pad columns on each side.
    pub fn with_extra_padding(&self, extra: usize) -> Self {
        let widen = |m: &Array2<u32>| {
            let mut out = Array2::from_elem((m.nrows(), m.ncols() + extra), PAD);
            out.slice_mut(ndarray::s![.., ..m.ncols()]).assign(m);
            out
        };
        Self {
            ids: self.ids.clone(),
            src_ids: widen(&self.src_ids),
            tgt_ids: widen(&self.tgt_ids),
            features: self.features.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn vocab_build_and_codec() {
        let a = toks("b a c");
        let b = toks("a d");
        let v = Vocab::build([a.as_slice(), b.as_slice()]);
        assert_eq!(v.len(), 8);
        assert_eq!(v.encode(&toks("a d zz")), vec![4, 7, UNK]);
        assert_eq!(v.decode(&[BOS, 4, 5, EOS, PAD]), toks("a b"));
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
    }

    #[test]
    fn batch_padding() {
        let f = FeatureSequence::new("v", array![[1.0], [2.0]]).unwrap();
        let e1 = Example { id: "a".into(), src: vec![5, 6, 7], tgt: vec![8], features: f.clone() };
        let e2 = Example { id: "b".into(), src: vec![5], tgt: vec![8, 9, 10], features: f };
        let b = Batch::from_examples(&[&e1, &e2], 12).unwrap();
        assert_eq!(b.src_ids, array![[5, 6, 7], [5, 0, 0]]);
        assert_eq!(b.tgt_ids, array![[8, 2, 0, 0], [8, 9, 10, 2]]);
        assert_eq!(b.src_tokens(1).unwrap(), vec![5]);
        assert_eq!(b.tgt_tokens(0).unwrap(), vec![8, 2]);
        let wide = b.with_extra_padding(3);
        assert_eq!(wide.src_ids.ncols(), 6);
        assert_eq!(wide.src_tokens(0).unwrap(), vec![5, 6, 7]);
    }

    #[test]
    fn inner_padding_rejected() {
        let f = FeatureSequence::new("v", array![[1.0]]).unwrap();
        let e = Example { id: "a".into(), src: vec![5, PAD, 6], tgt: vec![], features: f };
        let b = Batch::from_examples(&[&e], 12).unwrap();
        assert!(b.src_tokens(0).is_err());
    }
}
