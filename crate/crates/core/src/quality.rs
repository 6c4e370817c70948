//! Quality-estimation scores and the keep/drop filter rule.
//!
//! A pair is dropped when more than `max_failures` of its configured
//! scorers fail their threshold. Each scorer declares whether higher or
//! lower values are better, so distances and similarities can share one
//! filter configuration.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusRecord;
use crate::{Error, Result};

pub type ScoreVector = BTreeMap<String, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    HigherIsBetter,
    LowerIsBetter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerSpec {
    pub name: String,
    pub threshold: f64,
    pub orientation: Orientation,
}

impl ScorerSpec {
    pub fn new(name: &str, threshold: f64, orientation: Orientation) -> Self {
        Self {
            name: name.to_string(),
            threshold,
            orientation,
        }
    }

    pub fn fails(&self, score: f64) -> bool {
        match self.orientation {
            Orientation::HigherIsBetter => score < self.threshold,
            Orientation::LowerIsBetter => score > self.threshold,
        }
    }
}

/// How many failing scorers a pair may have before it is dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaxFailures {
    Limit(usize),
    Unlimited,
}

impl MaxFailures {
    /// Negative limits have no meaning and are rejected.
    pub fn from_signed(v: i64) -> Result<Self> {
        usize::try_from(v)
            .map(MaxFailures::Limit)
            .map_err(|_| Error::Config(format!("max_failures must be >= 0, got {v}")))
    }

    fn exceeded_by(self, failures: usize) -> bool {
        match self {
            MaxFailures::Limit(n) => failures > n,
            MaxFailures::Unlimited => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub specs: Vec<ScorerSpec>,
    pub max_failures: MaxFailures,
}

impl Default for FilterConfig {
    /// COMET (0.1), multilingual embedding distance (4, lower is better) and
    /// round-trip BLEU (20); a pair survives one failure.
    fn default() -> Self {
        Self {
            specs: vec![
                ScorerSpec::new("comet", 0.1, Orientation::HigherIsBetter),
                ScorerSpec::new("embedding_distance", 4.0, Orientation::LowerIsBetter),
                ScorerSpec::new("round_trip_bleu", 20.0, Orientation::HigherIsBetter),
            ],
            max_failures: MaxFailures::Limit(1),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for s in &self.specs {
            if !names.insert(s.name.as_str()) {
                return Err(Error::Config(format!("duplicate scorer `{}`", s.name)));
            }
            if !s.threshold.is_finite() {
                return Err(Error::Config(format!("scorer `{}` has a non-finite threshold", s.name)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterDecision {
    pub keep: bool,
    /// Names of the failing scorers, in the order the scorers are configured.
    pub failing: Vec<String>,
}

pub fn apply_filter(scores: &ScoreVector, specs: &[ScorerSpec], max_failures: MaxFailures) -> Result<FilterDecision> {
    let mut failing = Vec::new();
    for spec in specs {
        let score = *scores.get(&spec.name).ok_or_else(|| Error::MissingScore {
            record: String::new(),
            scorer: spec.name.clone(),
        })?;
        if spec.fails(score) {
            failing.push(spec.name.clone());
        }
    }
    Ok(FilterDecision {
        keep: !max_failures.exceeded_by(failing.len()),
        failing,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<CorpusRecord>,
    /// Dropped record ids with the scorers they failed.
    pub dropped: Vec<(String, Vec<String>)>,
}

pub fn filter_corpus(records: Vec<CorpusRecord>, config: &FilterConfig) -> Result<FilterOutcome> {
    config.validate()?;
    let mut out = FilterOutcome::default();
    let empty = ScoreVector::new();
    for record in records {
        let scores = record.scores.as_ref().unwrap_or(&empty);
        let decision = apply_filter(scores, &config.specs, config.max_failures).map_err(|e| match e {
            Error::MissingScore { scorer, .. } => Error::MissingScore {
                record: record.id.clone(),
                scorer,
            },
            other => other,
        })?;
        if decision.keep {
            out.kept.push(record);
        } else {
            out.dropped.push((record.id, decision.failing));
        }
    }
    Ok(out)
}

/// Scores keyed by record id, then scorer name.
pub type ScoreTable = BTreeMap<String, ScoreVector>;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreLine {
    id: String,
    scores: ScoreVector,
}

/// Reads either a TSV with header `id<TAB>scorer<TAB>value` or JSONL lines
/// `{"id": ..., "scores": {...}}`; the format is detected from the first
/// non-blank character.
pub fn read_score_file<R: BufRead>(reader: R) -> Result<ScoreTable> {
    let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
    let first = lines.iter().find(|l| !l.trim().is_empty());
    let json = first.is_some_and(|l| l.trim_start().starts_with('{'));
    let mut table = ScoreTable::new();

    for (no, line) in lines.iter().enumerate() {
        let line_no = no + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if json {
            let row: ScoreLine = serde_json::from_str(line).map_err(|e| Error::Schema {
                line: line_no,
                message: e.to_string(),
            })?;
            table.entry(row.id).or_default().extend(row.scores);
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if Some(line) == first.map(|s| s.as_str()) {
            if fields != ["id", "scorer", "value"] {
                return Err(Error::Parse {
                    line: line_no,
                    message: "expected header `id<TAB>scorer<TAB>value`".into(),
                });
            }
            continue;
        }
        let [id, scorer, value] = fields[..] else {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 3 columns, found {}", fields.len()),
            });
        };
        let value: f64 = value.trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("bad score value `{value}`"),
        })?;
        table
            .entry(id.to_string())
            .or_default()
            .insert(scorer.to_string(), value);
    }
    Ok(table)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub populated: usize,
    /// Ids present in the score table but not in the corpus.
    pub unknown_ids: Vec<String>,
    /// Corpus records that received no scores.
    pub unscored: Vec<String>,
}

pub fn ingest_scores(records: &mut [CorpusRecord], table: &ScoreTable) -> IngestReport {
    let mut report = IngestReport::default();
    let mut matched = BTreeSet::new();
    for r in records.iter_mut() {
        match table.get(&r.id) {
            Some(scores) => {
                r.scores.get_or_insert_with(ScoreVector::new).extend(scores.clone());
                matched.insert(r.id.as_str());
                report.populated += 1;
            }
            None => report.unscored.push(r.id.clone()),
        }
    }
    report.unknown_ids = table
        .keys()
        .filter(|id| !matched.contains(id.as_str()))
        .cloned()
        .collect();
    report
}

/// Reference-free stand-ins for external quality-estimation models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Heuristic {
    /// min(#source tokens, #target characters) / max(...).
    LengthRatio,
    /// Jaccard overlap of digit/Latin tokens shared by both sides.
    LexicalOverlap,
}

impl Heuristic {
    pub fn name(self) -> &'static str {
        match self {
            Heuristic::LengthRatio => "length_ratio",
            Heuristic::LexicalOverlap => "lexical_overlap",
        }
    }
}

pub fn heuristic_score(record: &CorpusRecord, heuristic: Heuristic) -> f64 {
    match heuristic {
        Heuristic::LengthRatio => {
            let src = record.src.split_whitespace().count();
            let tgt = record.tgt.chars().filter(|c| !c.is_whitespace()).count();
            if src == 0 || tgt == 0 {
                0.0
            } else {
                src.min(tgt) as f64 / src.max(tgt) as f64
            }
        }
        Heuristic::LexicalOverlap => {
            let a = latin_tokens(&record.src);
            let b = latin_tokens(&record.tgt);
            if record.src.trim().is_empty() || record.tgt.trim().is_empty() {
                return 0.0;
            }
            let shared = a.intersection(&b).count();
            let union = a.union(&b).count();
            shared as f64 / union.max(1) as f64
        }
    }
}

fn latin_tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_ascii_lowercase)
        .collect()
}
