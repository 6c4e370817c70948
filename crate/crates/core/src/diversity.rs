//! Corpus diversity statistics: unique n-grams, part-of-speech profiles and
//! per-video category voting.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use crate::corpus::CorpusRecord;
use crate::metrics::Tokenizer;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Normalization {
    pub lowercase: bool,
    pub strip_punctuation: bool,
    pub tokenizer: Tokenizer,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            lowercase: true,
            strip_punctuation: true,
            tokenizer: Tokenizer::Whitespace,
        }
    }
}

impl Normalization {
    pub fn tokens(&self, text: &str) -> Vec<String> {
        let mut s: String = if self.strip_punctuation {
            text.chars().filter(|c| !is_punctuation(*c)).collect()
        } else {
            text.to_string()
        };
        if self.lowercase {
            s = s.to_lowercase();
        }
        self.tokenizer.tokenize(&s)
    }
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NgramCount {
    pub n: usize,
    pub unique: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NgramProfile {
    pub orders: Vec<NgramCount>,
}

/// Partial n-gram statistics. Counters built over shards merge into the
/// counter of the whole corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NgramCounter {
    seen: Vec<HashSet<Vec<String>>>,
    totals: Vec<usize>,
}

impl NgramCounter {
    pub fn new(n_max: usize) -> Self {
        Self {
            seen: vec![HashSet::new(); n_max],
            totals: vec![0; n_max],
        }
    }

    pub fn n_max(&self) -> usize {
        self.totals.len()
    }

    pub fn add_tokens(&mut self, tokens: &[String]) {
        for n in 1..=self.n_max() {
            for gram in tokens.windows(n) {
                self.totals[n - 1] += 1;
                self.seen[n - 1].insert(gram.to_vec());
            }
        }
    }

    pub fn merge(mut self, other: NgramCounter) -> Self {
        assert_eq!(self.n_max(), other.n_max(), "merging counters of different order");
        for (i, set) in other.seen.into_iter().enumerate() {
            self.seen[i].extend(set);
            self.totals[i] += other.totals[i];
        }
        self
    }

    pub fn profile(&self) -> NgramProfile {
        NgramProfile {
            orders: (0..self.n_max())
                .map(|i| NgramCount {
                    n: i + 1,
                    unique: self.seen[i].len(),
                    total: self.totals[i],
                })
                .collect(),
        }
    }
}

pub fn ngram_counter<I, S>(texts: I, n_max: usize, norm: &Normalization) -> NgramCounter
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counter = NgramCounter::new(n_max);
    for text in texts {
        counter.add_tokens(&norm.tokens(text.as_ref()));
    }
    counter
}

pub fn ngram_profile<I, S>(texts: I, n_max: usize, norm: &Normalization) -> NgramProfile
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    ngram_counter(texts, n_max, norm).profile()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PosTag {
    Verb,
    Noun,
    Adjective,
    Adverb,
    Other,
}

impl FromStr for PosTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "verb" | "v" => PosTag::Verb,
            "noun" | "n" => PosTag::Noun,
            "adjective" | "adj" | "a" => PosTag::Adjective,
            "adverb" | "adv" | "d" => PosTag::Adverb,
            "other" | "x" => PosTag::Other,
            other => return Err(Error::invalid(format!("unknown POS tag `{other}`"))),
        })
    }
}

pub trait PosTagger {
    fn tag(&self, token: &str) -> PosTag;
}

impl<F: Fn(&str) -> PosTag> PosTagger for F {
    fn tag(&self, token: &str) -> PosTag {
        self(token)
    }
}

/// Dictionary tagger; unknown words are tagged [`PosTag::Other`].
#[derive(Debug, Clone, Default)]
pub struct LexiconTagger {
    entries: HashMap<String, PosTag>,
}

const DEFAULT_POS_LEXICON: &str = include_str!("../data/pos_lexicon.tsv");

impl LexiconTagger {
    /// Parses `word<TAB>tag` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = HashMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, tag) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: no + 1,
                message: "expected `word<TAB>tag`".into(),
            })?;
            let tag = tag.trim().parse().map_err(|_| Error::Parse {
                line: no + 1,
                message: format!("unknown tag `{tag}`"),
            })?;
            entries.insert(word.trim().to_lowercase(), tag);
        }
        Ok(Self { entries })
    }

    /// A small English lexicon bundled with the crate.
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_POS_LEXICON).expect("bundled lexicon parses")
    }
}

impl PosTagger for LexiconTagger {
    fn tag(&self, token: &str) -> PosTag {
        self.entries
            .get(&token.to_lowercase())
            .copied()
            .unwrap_or(PosTag::Other)
    }
}

/// Unique word types per content tag.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PosProfile {
    pub verb: usize,
    pub noun: usize,
    pub adjective: usize,
    pub adverb: usize,
}

pub fn pos_profile<I, S, T>(texts: I, tagger: &T, norm: &Normalization) -> PosProfile
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
    T: PosTagger + ?Sized,
{
    let mut types: HashMap<PosTag, HashSet<String>> = HashMap::new();
    for text in texts {
        for tok in norm.tokens(text.as_ref()) {
            let tag = tagger.tag(&tok);
            if tag != PosTag::Other {
                types.entry(tag).or_default().insert(tok);
            }
        }
    }
    let count = |t| types.get(&t).map_or(0, HashSet::len);
    PosProfile {
        verb: count(PosTag::Verb),
        noun: count(PosTag::Noun),
        adjective: count(PosTag::Adjective),
        adverb: count(PosTag::Adverb),
    }
}

/// Assigns a category label to a block of concatenated subtitles.
pub trait Labeler {
    fn label(&self, text: &str) -> String;
}

impl<F: Fn(&str) -> String> Labeler for F {
    fn label(&self, text: &str) -> String {
        self(text)
    }
}

/// Labels a group by counting category keywords; the category listed first
/// wins ties, and text without hits is labelled `unknown`.
#[derive(Debug, Clone, Default)]
pub struct KeywordLabeler {
    categories: Vec<(String, HashSet<String>)>,
}

impl KeywordLabeler {
    /// Parses `category<TAB>keyword` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut categories: Vec<(String, HashSet<String>)> = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (cat, kw) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: no + 1,
                message: "expected `category<TAB>keyword`".into(),
            })?;
            let kw = kw.trim().to_lowercase();
            match categories.iter_mut().find(|(c, _)| c == cat) {
                Some((_, set)) => {
                    set.insert(kw);
                }
                None => categories.push((cat.to_string(), HashSet::from([kw]))),
            }
        }
        Ok(Self { categories })
    }
}

impl Labeler for KeywordLabeler {
    fn label(&self, text: &str) -> String {
        let norm = Normalization::default();
        let tokens = norm.tokens(text);
        let mut best: Option<(&str, usize)> = None;
        for (cat, kws) in &self.categories {
            let hits = tokens.iter().filter(|t| kws.contains(*t)).count();
            if hits > 0 && best.is_none_or(|(_, h)| hits > h) {
                best = Some((cat, hits));
            }
        }
        best.map_or_else(|| "unknown".to_string(), |(c, _)| c.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CategoryVote {
    pub group_size: usize,
    pub group_labels: Vec<String>,
    pub winner: String,
}

/// Groups consecutive subtitles of one video, labels every group, and
/// returns the majority label. Ties go to the label whose first group
/// comes earliest.
pub fn vote_category<L: Labeler + ?Sized>(
    records: &[CorpusRecord],
    labeler: &L,
    group_size: usize,
) -> Result<CategoryVote> {
    if records.is_empty() {
        return Err(Error::invalid("no subtitles"));
    }
    if group_size == 0 {
        return Err(Error::Config("group size must be positive".into()));
    }
    let mut ordered: Vec<&CorpusRecord> = records.iter().collect();
    ordered.sort_by_key(|r| r.clip_start_ms);

    let group_labels: Vec<String> = ordered
        .chunks(group_size)
        .map(|g| {
            let text = g.iter().map(|r| r.src.as_str()).collect::<Vec<_>>().join(" ");
            labeler.label(&text)
        })
        .collect();

    // label -> (votes, first group position)
    let mut tally: HashMap<&str, (usize, usize)> = HashMap::new();
    for (pos, label) in group_labels.iter().enumerate() {
        tally.entry(label).or_insert((0, pos)).0 += 1;
    }
    let winner = tally
        .into_iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
        .map(|(l, _)| l.to_string())
        .expect("at least one group");

    Ok(CategoryVote {
        group_size,
        group_labels,
        winner,
    })
}

/// Votes a label for every video; returns video id -> vote.
pub fn vote_by_video<L: Labeler + ?Sized>(
    records: &[CorpusRecord],
    labeler: &L,
    group_size: usize,
) -> Result<BTreeMap<String, CategoryVote>> {
    let mut videos: BTreeMap<&str, Vec<CorpusRecord>> = BTreeMap::new();
    for r in records {
        videos.entry(r.video_id.as_str()).or_default().push(r.clone());
    }
    videos
        .into_iter()
        .map(|(v, recs)| Ok((v.to_string(), vote_category(&recs, labeler, group_size)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DiversityReport {
    pub records: usize,
    pub videos: usize,
    pub src_ngrams: NgramProfile,
    pub tgt_ngrams: NgramProfile,
    pub src_pos: PosProfile,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub categories: Option<BTreeMap<String, usize>>,
}

impl DiversityReport {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("metric\tvalue\n");
        let _ = writeln!(s, "records\t{}", self.records);
        let _ = writeln!(s, "videos\t{}", self.videos);
        for (side, prof) in [("src", &self.src_ngrams), ("tgt", &self.tgt_ngrams)] {
            for o in &prof.orders {
                let _ = writeln!(s, "{side}_{}gram_unique\t{}", o.n, o.unique);
                let _ = writeln!(s, "{side}_{}gram_total\t{}", o.n, o.total);
            }
        }
        let p = &self.src_pos;
        for (tag, v) in [("verb", p.verb), ("noun", p.noun), ("adjective", p.adjective), ("adverb", p.adverb)] {
            let _ = writeln!(s, "pos_{tag}\t{v}");
        }
        if let Some(cats) = &self.categories {
            for (c, n) in cats {
                let _ = writeln!(s, "category_{c}\t{n}");
            }
        }
        s
    }
}

pub struct ReportOptions<'a> {
    pub n_max: usize,
    pub src_norm: Normalization,
    pub tgt_norm: Normalization,
    pub tagger: &'a dyn PosTagger,
    pub labeler: Option<&'a dyn Labeler>,
    pub group_size: usize,
}

pub fn diversity_report(records: &[CorpusRecord], opts: &ReportOptions<'_>) -> Result<DiversityReport> {
    let videos: HashSet<&str> = records.iter().map(|r| r.video_id.as_str()).collect();
    let categories = match opts.labeler {
        Some(l) => {
            let votes = vote_by_video(records, l, opts.group_size)?;
            let mut dist = BTreeMap::new();
            for v in votes.values() {
                *dist.entry(v.winner.clone()).or_insert(0) += 1;
            }
            Some(dist)
        }
        None => None,
    };
    Ok(DiversityReport {
        records: records.len(),
        videos: videos.len(),
        src_ngrams: ngram_profile(records.iter().map(|r| &r.src), opts.n_max, &opts.src_norm),
        tgt_ngrams: ngram_profile(records.iter().map(|r| &r.tgt), opts.n_max, &opts.tgt_norm),
        src_pos: pos_profile(records.iter().map(|r| &r.src), opts.tagger, &opts.src_norm),
        categories,
    })
}
