//! A synthetic parallel corpus whose ambiguous words can only be resolved
//! from the clip features.
//!
//! Plain source words map one-to-one onto target characters. Each
//! ambiguous word has two renderings, chosen by a binary class that is
//! encoded in the clip's frames as a sign pattern plus Gaussian noise.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::data::{encode_records, Example, TextSpec, Vocab};
use super::frames::{write_feature_file, write_manifest, FeatureSequence, ManifestEntry};
use super::probe::ProbeItem;
use crate::corpus::{write_corpus, CorpusRecord, Split};
use crate::metrics::{write_annotations, TermAnnotation};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    /// Training records.
    pub size: usize,
    /// Records in each of the two test splits.
    pub test_size: usize,
    /// Probability that a training sentence contains an ambiguous word.
    pub ambiguity_rate: f64,
    pub plain_words: usize,
    pub ambiguous_words: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub d_feature: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            size: 128,
            test_size: 32,
            ambiguity_rate: 0.5,
            plain_words: 24,
            ambiguous_words: 4,
            min_words: 3,
            max_words: 7,
            d_feature: 16,
            min_frames: 4,
            max_frames: 12,
            noise: 0.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.size < 2 {
            return bad("synthetic corpus size must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.ambiguity_rate) {
            return bad("ambiguity_rate must lie in [0, 1]");
        }
        if self.ambiguity_rate > 0.0 && self.ambiguous_words == 0 {
            return bad("ambiguity needs at least one ambiguous word");
        }
        if self.plain_words == 0 || self.min_words == 0 || self.min_words > self.max_words {
            return bad("invalid sentence shape");
        }
        if self.d_feature == 0 || self.min_frames == 0 || self.min_frames > self.max_frames {
            return bad("invalid feature shape");
        }
        if !(self.noise >= 0.0) {
            return bad("noise must be non-negative");
        }
        Ok(())
    }
}

pub fn plain_source(i: usize) -> String {
    format!("w{i:02}")
}

pub fn ambiguous_source(k: usize) -> String {
    format!("amb{k}")
}

pub fn plain_target(i: usize) -> char {
    char::from_u32(0x4E10 + i as u32).expect("CJK range")
}

pub fn ambiguous_target(k: usize, class: usize) -> char {
    char::from_u32(0x5E00 + 2 * k as u32 + class as u32).expect("CJK range")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyCorpus {
    pub records: Vec<CorpusRecord>,
    /// Keyed by record id.
    pub features: BTreeMap<String, FeatureSequence>,
    pub annotations: Vec<TermAnnotation>,
    /// Video class of each record.
    pub classes: BTreeMap<String, usize>,
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
    patterns: [Array1<f64>; 2],
    out: ToyCorpus,
}

impl Generator<'_> {
    fn record(&mut self, split: Split, ambiguous: Option<usize>, class: usize) -> Result<()> {
        let cfg = self.cfg;
        let n = self.out.records.len();
        let len = self.rng.random_range(cfg.min_words..=cfg.max_words);
        let mut words: Vec<(String, char)> = (0..len)
            .map(|_| {
                let i = self.rng.random_range(0..cfg.plain_words);
                (plain_source(i), plain_target(i))
            })
            .collect();
        if let Some(k) = ambiguous {
            let at = self.rng.random_range(0..len);
            words[at] = (ambiguous_source(k), ambiguous_target(k, class));
        }

        let frames = self.rng.random_range(cfg.min_frames..=cfg.max_frames);
        let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;
        let pattern = &self.patterns[class];
        let data = Array2::from_shape_fn((frames, cfg.d_feature), |(_, j)| pattern[j] + noise.sample(&mut self.rng));

        let video_id = format!("toy{n:05}");
        let id = format!("{video_id}#000000");
        let src: Vec<&str> = words.iter().map(|(s, _)| s.as_str()).collect();
        let tgt: String = words.iter().map(|(_, t)| *t).collect();
        self.out.records.push(CorpusRecord {
            id: id.clone(),
            video_id: video_id.clone(),
            clip_start_ms: 0,
            clip_end_ms: frames as i64 * 500,
            src: src.join(" "),
            tgt,
            scores: None,
            category: None,
            split,
        });
        self.out.features.insert(id.clone(), FeatureSequence::new(video_id, data)?);
        self.out.classes.insert(id.clone(), class);
        if let Some(k) = ambiguous {
            self.out.annotations.push(TermAnnotation {
                record_id: id,
                src_term: vec![ambiguous_source(k)],
                tgt_variants: vec![vec![ambiguous_target(k, class).to_string()]],
            });
        }
        Ok(())
    }
}

/// Training split, then a class-balanced ambiguous test split, then an
/// unambiguous test split. Identical seeds give identical corpora.
pub fn generate_toy_corpus(cfg: &SynthConfig) -> Result<ToyCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base: Array1<f64> = (0..cfg.d_feature).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    let mut g = Generator {
        cfg,
        rng,
        patterns: [base.clone(), -base],
        out: ToyCorpus {
            records: Vec::new(),
            features: BTreeMap::new(),
            annotations: Vec::new(),
            classes: BTreeMap::new(),
        },
    };
    for _ in 0..cfg.size {
        let ambiguous = (cfg.ambiguous_words > 0 && g.rng.random::<f64>() < cfg.ambiguity_rate)
            .then(|| g.rng.random_range(0..cfg.ambiguous_words));
        let class = g.rng.random_range(0..2);
        g.record(Split::Train, ambiguous, class)?;
    }
    if cfg.ambiguous_words > 0 {
        for i in 0..cfg.test_size {
            let k = i % cfg.ambiguous_words;
            let class = (i / cfg.ambiguous_words) % 2;
            g.record(Split::TestAmbiguous, Some(k), class)?;
        }
    }
    for _ in 0..cfg.test_size {
        let class = g.rng.random_range(0..2);
        g.record(Split::TestUnambiguous, None, class)?;
    }
    Ok(g.out)
}

fn feature_stem(id: &str) -> String {
    id.replace('#', "_")
}

impl ToyCorpus {
    pub fn split(&self, split: Split) -> Vec<CorpusRecord> {
        self.records.iter().filter(|r| r.split == split).cloned().collect()
    }

    /// Vocabularies over every record.
    pub fn vocabs(&self, text: TextSpec) -> (Vocab, Vocab) {
        let src: Vec<Vec<String>> = self.records.iter().map(|r| text.src_tokens(&r.src)).collect();
        let tgt: Vec<Vec<String>> = self.records.iter().map(|r| text.tgt_tokens(&r.tgt)).collect();
        (
            Vocab::build(src.iter().map(Vec::as_slice)),
            Vocab::build(tgt.iter().map(Vec::as_slice)),
        )
    }

    pub fn examples(&self, text: TextSpec, src_vocab: &Vocab, tgt_vocab: &Vocab, split: Split) -> Result<Vec<Example>> {
        let features: HashMap<String, FeatureSequence> = self.features.clone().into_iter().collect();
        encode_records(&self.split(split), &features, src_vocab, tgt_vocab, text, 256)
    }

    pub fn probe_items(&self, text: TextSpec, src_vocab: &Vocab, tgt_vocab: &Vocab, split: Split) -> Result<Vec<ProbeItem>> {
        let records = self.split(split);
        let examples = self.examples(text, src_vocab, tgt_vocab, split)?;
        Ok(records
            .iter()
            .zip(examples)
            .map(|(r, example)| ProbeItem {
                example,
                reference: text.tgt_tokens(&r.tgt),
                annotations: self.annotations.iter().filter(|a| a.record_id == r.id).cloned().collect(),
            })
            .collect())
    }

    /// Writes `corpus.jsonl`, `annotations.jsonl`, `manifest.jsonl` and
    /// `features/<stem>.{f32,meta.json}` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let feat_dir = dir.join("features");
        fs::create_dir_all(&feat_dir)?;
        write_corpus(BufWriter::new(fs::File::create(dir.join("corpus.jsonl"))?), &self.records)?;
        write_annotations(BufWriter::new(fs::File::create(dir.join("annotations.jsonl"))?), &self.annotations)?;
        let mut manifest = Vec::with_capacity(self.records.len());
        for r in &self.records {
            let stem = feature_stem(&r.id);
            write_feature_file(&feat_dir, &stem, &self.features[&r.id])?;
            manifest.push(ManifestEntry {
                id: r.id.clone(),
                path: format!("features/{stem}.f32"),
            });
        }
        write_manifest(BufWriter::new(fs::File::create(dir.join("manifest.jsonl"))?), &manifest)?;
        Ok(())
    }
}
