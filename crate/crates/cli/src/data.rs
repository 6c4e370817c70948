//! Corpus and metric commands: build, filter, stats, eval.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use vmtlab_core::corpus::{
    attach_clips, merge_into_sentences, pack_segments, parse_chunks, write_corpus, BuildConfig, ChunkFormat,
};
use vmtlab_core::diversity::{diversity_report, KeywordLabeler, LexiconTagger, Normalization, ReportOptions};
use vmtlab_core::metrics::{evaluate, parse_stopwords, EvalConfig, EvalPair, Tokenizer};
use vmtlab_core::quality::{
    filter_corpus, heuristic_score, ingest_scores, read_score_file, FilterConfig, Heuristic, MaxFailures,
};
use vmtlab_core::{Error, Orientation, ScorerSpec, Split};

use crate::config::{required, RunConfig};
use crate::io::{emit, jsonl, load_annotations, load_corpus, open, pretty};
use crate::OutputArg;

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

// ---------------------------------------------------------------- build

#[derive(Args)]
pub struct BuildArgs {
    /// Subtitle file, or a directory of `.srt` / `.tsv` files.
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// `srt` or `tsv`; inferred from each file's extension when omitted.
    #[arg(long)]
    format: Option<String>,
    /// Largest gap (ms) between chunks merged into one sentence.
    #[arg(long)]
    gap_ms: Option<i64>,
    /// Longest multi-sentence segment (ms).
    #[arg(long)]
    max_duration_ms: Option<i64>,
    /// Largest gap (ms) between sentences packed into one segment.
    #[arg(long)]
    pack_gap_ms: Option<i64>,
    /// Split assigned to every record.
    #[arg(long)]
    split: Option<String>,
    #[command(flatten)]
    out: OutputArg,
}

#[derive(Serialize, Default)]
struct BuildCounts {
    files: usize,
    videos: usize,
    chunks: usize,
    skipped: usize,
    sentences: usize,
    segments: usize,
    records: usize,
}

fn input_files(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .with_context(|| format!("listing {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && matches!(p.extension().and_then(|e| e.to_str()), Some("srt" | "tsv")))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!(Error::InvalidInput(format!("no .srt or .tsv files in {}", input.display())));
    }
    Ok(files)
}

pub fn build(a: BuildArgs, cfg: &RunConfig) -> Result<()> {
    let b = &cfg.build;
    let mut bc = BuildConfig::default();
    bc.gap_ms = a.gap_ms.or(b.gap_ms).unwrap_or(bc.gap_ms);
    bc.max_duration_ms = a.max_duration_ms.or(b.max_duration_ms).unwrap_or(bc.max_duration_ms);
    bc.pack_gap_ms = a.pack_gap_ms.or(b.pack_gap_ms).unwrap_or(bc.pack_gap_ms);
    if let Some(marks) = &b.end_marks {
        bc.end_marks = marks.chars().collect();
    }
    bc.validate()?;
    let split: Split = a.split.as_ref().or(b.split.as_ref()).map_or(Ok(Split::Train), |s| s.parse())?;
    let forced: Option<ChunkFormat> = a.format.as_ref().or(b.format.as_ref()).map(|f| f.parse()).transpose()?;

    let mut counts = BuildCounts::default();
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for file in input_files(&a.input)? {
        let format = match forced {
            Some(f) => f,
            None if file.extension().is_some_and(|e| e == "tsv") => ChunkFormat::Tsv,
            None => ChunkFormat::SrtLike,
        };
        let parsed = parse_chunks(open(&file)?, format).with_context(|| format!("parsing {}", file.display()))?;
        for s in &parsed.skipped {
            eprintln!("warning: {}:{}: {}", file.display(), s.line, s.reason);
        }
        counts.files += 1;
        counts.skipped += parsed.skipped.len();
        counts.chunks += parsed.chunk_count();
        let stem = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for video in parsed.videos {
            let video_id = video.video_id.unwrap_or_else(|| stem.clone());
            if !seen.insert(video_id.clone()) {
                bail!(Error::InvalidInput(format!("video `{video_id}` appears more than once")));
            }
            let sentences = merge_into_sentences(&video.chunks, bc.gap_ms, &bc.end_marks);
            let segments = pack_segments(&sentences, bc.max_duration_ms, bc.pack_gap_ms);
            counts.sentences += sentences.len();
            counts.segments += segments.len();
            records.extend(attach_clips(&segments, &video_id)?.into_iter().map(|mut r| {
                r.split = split;
                r
            }));
        }
    }
    counts.videos = seen.len();
    counts.records = records.len();

    let mut buf = Vec::new();
    write_corpus(&mut buf, &records)?;
    emit(a.out.output.as_deref(), &buf)?;
    let summary = serde_json::to_string(&counts)?;
    if a.out.output.is_some() {
        println!("{summary}");
    } else {
        eprintln!("{summary}");
    }
    Ok(())
}

// ---------------------------------------------------------------- filter

#[derive(Args)]
pub struct FilterArgs {
    #[arg(long, value_name = "FILE")]
    corpus: Option<PathBuf>,
    /// Score file: TSV `id, scorer, value` or JSONL `{id, scores}`.
    #[arg(long, value_name = "FILE")]
    scores: Option<PathBuf>,
    /// Scorer as `name:threshold:higher|lower`; repeat for several.
    #[arg(long = "scorer", value_name = "SPEC")]
    scorers: Vec<String>,
    /// Failing scorers tolerated per pair, or `unlimited`.
    #[arg(long)]
    max_failures: Option<String>,
    /// Compute a built-in score first: `length_ratio` or `lexical_overlap`.
    #[arg(long = "heuristic", value_name = "NAME")]
    heuristics: Vec<String>,
    /// Where the kept records go.
    #[arg(short, long, value_name = "FILE")]
    output: PathBuf,
    /// Drop report; standard output when omitted.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

fn parse_scorer(spec: &str) -> Result<ScorerSpec> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [name, threshold, orientation] = parts[..] else {
        bail!(config_error(format!("scorer `{spec}` is not `name:threshold:higher|lower`")));
    };
    let threshold: f64 = threshold
        .parse()
        .map_err(|_| config_error(format!("bad threshold in scorer `{spec}`")))?;
    let orientation = match orientation {
        "higher" | "higher-is-better" => Orientation::HigherIsBetter,
        "lower" | "lower-is-better" => Orientation::LowerIsBetter,
        other => bail!(config_error(format!("unknown orientation `{other}`"))),
    };
    Ok(ScorerSpec::new(name, threshold, orientation))
}

fn parse_max_failures(v: &str) -> Result<MaxFailures> {
    match v {
        "unlimited" | "inf" => Ok(MaxFailures::Unlimited),
        n => {
            let n: i64 = n.parse().map_err(|_| config_error(format!("bad max_failures `{n}`")))?;
            Ok(MaxFailures::from_signed(n)?)
        }
    }
}

fn parse_heuristic(name: &str) -> Result<Heuristic> {
    match name {
        "length_ratio" => Ok(Heuristic::LengthRatio),
        "lexical_overlap" => Ok(Heuristic::LexicalOverlap),
        other => bail!(config_error(format!("unknown heuristic `{other}`"))),
    }
}

#[derive(Serialize)]
struct Dropped {
    id: String,
    failing: Vec<String>,
}

#[derive(Serialize)]
struct FilterReport {
    input: usize,
    kept: usize,
    dropped: Vec<Dropped>,
    unknown_score_ids: Vec<String>,
    unscored: Vec<String>,
}

pub fn filter(a: FilterArgs, cfg: &RunConfig) -> Result<()> {
    let corpus = required(a.corpus, &cfg.paths.corpus, "--corpus")?;
    let mut records = load_corpus(&corpus)?;
    let input = records.len();

    let mut fc = FilterConfig::default();
    if !a.scorers.is_empty() {
        fc.specs = a.scorers.iter().map(|s| parse_scorer(s)).collect::<Result<_>>()?;
    } else if let Some(specs) = &cfg.filter.scorers {
        fc.specs = specs.clone();
    }
    fc.max_failures = match (&a.max_failures, cfg.filter.max_failures) {
        (Some(v), _) => parse_max_failures(v)?,
        (None, Some(n)) => MaxFailures::from_signed(n)?,
        (None, None) => fc.max_failures,
    };
    fc.validate()?;

    let heuristics = if a.heuristics.is_empty() {
        cfg.filter.heuristics.clone().unwrap_or_default()
    } else {
        a.heuristics.clone()
    };
    for h in heuristics.iter().map(|h| parse_heuristic(h)).collect::<Result<Vec<_>>>()? {
        for r in &mut records {
            let s = heuristic_score(r, h);
            r.scores.get_or_insert_with(Default::default).insert(h.name().to_string(), s);
        }
    }

    let (mut unknown, mut unscored) = (Vec::new(), Vec::new());
    if let Some(path) = a.scores.or_else(|| cfg.paths.scores.clone()) {
        let table = read_score_file(open(&path)?).with_context(|| format!("reading scores {}", path.display()))?;
        let ingest = ingest_scores(&mut records, &table);
        unknown = ingest.unknown_ids;
        unscored = ingest.unscored;
    }

    let outcome = filter_corpus(records, &fc)?;
    let mut buf = Vec::new();
    write_corpus(&mut buf, &outcome.kept)?;
    emit(Some(&a.output), &buf)?;
    let report = FilterReport {
        input,
        kept: outcome.kept.len(),
        dropped: outcome
            .dropped
            .into_iter()
            .map(|(id, failing)| Dropped { id, failing })
            .collect(),
        unknown_score_ids: unknown,
        unscored,
    };
    emit(a.report.as_deref(), &pretty(&report)?)
}

// ---------------------------------------------------------------- stats

#[derive(Args)]
pub struct StatsArgs {
    #[arg(long, value_name = "FILE")]
    corpus: Option<PathBuf>,
    /// Largest n-gram order.
    #[arg(long)]
    n_max: Option<usize>,
    /// `word<TAB>tag` lexicon replacing the bundled one.
    #[arg(long, value_name = "FILE")]
    lexicon: Option<PathBuf>,
    /// `category<TAB>keyword` list; enables per-video category voting.
    #[arg(long, value_name = "FILE")]
    keywords: Option<PathBuf>,
    /// Consecutive subtitles labelled together when voting.
    #[arg(long)]
    group_size: Option<usize>,
    /// Emit a two-column TSV instead of JSON.
    #[arg(long)]
    tsv: bool,
    #[command(flatten)]
    out: OutputArg,
}

pub fn stats(a: StatsArgs, cfg: &RunConfig) -> Result<()> {
    let s = &cfg.stats;
    let corpus = required(a.corpus, &cfg.paths.corpus, "--corpus")?;
    let records = load_corpus(&corpus)?;

    let read = |p: &Path| fs::read_to_string(p).with_context(|| format!("reading {}", p.display()));
    let tagger = match a.lexicon.or_else(|| s.lexicon.clone()) {
        Some(p) => LexiconTagger::parse(&read(&p)?)?,
        None => LexiconTagger::builtin(),
    };
    let labeler = match a.keywords.or_else(|| s.keywords.clone()) {
        Some(p) => Some(KeywordLabeler::parse(&read(&p)?)?),
        None => None,
    };
    let mut src_norm = Normalization::default();
    if let Some(v) = s.lowercase {
        src_norm.lowercase = v;
    }
    if let Some(v) = s.strip_punctuation {
        src_norm.strip_punctuation = v;
    }
    let tgt_norm = Normalization {
        tokenizer: Tokenizer::Zh,
        ..src_norm
    };
    let opts = ReportOptions {
        n_max: a.n_max.or(s.n_max).unwrap_or(4),
        src_norm,
        tgt_norm,
        tagger: &tagger,
        labeler: labeler.as_ref().map(|l| l as _),
        group_size: a.group_size.or(s.group_size).unwrap_or(5),
    };
    let report = diversity_report(&records, &opts)?;
    let bytes = if a.tsv { report.to_tsv().into_bytes() } else { pretty(&report)? };
    emit(a.out.output.as_deref(), &bytes)
}

// ---------------------------------------------------------------- eval

#[derive(Args)]
pub struct EvalArgs {
    /// JSONL lines `{record_id, hyp, ref}`.
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// Term annotations (JSONL); term metrics are skipped without them.
    #[arg(long, value_name = "FILE")]
    annotations: Option<PathBuf>,
    /// `zh` (one token per CJK character) or `whitespace`.
    #[arg(long)]
    tok: Option<Tokenizer>,
    /// Stopword list, one word per line, replacing the bundled lists.
    #[arg(long, value_name = "FILE")]
    stopwords: Option<PathBuf>,
    /// Add a per-record breakdown.
    #[arg(long)]
    per_record: bool,
    #[command(flatten)]
    out: OutputArg,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EvalLine {
    pub record_id: String,
    pub hyp: String,
    #[serde(rename = "ref")]
    pub reference: String,
}

fn read_eval_lines(path: &Path) -> Result<Vec<EvalLine>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: EvalLine = serde_json::from_str(line).map_err(|e| Error::Schema {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(row);
    }
    Ok(out)
}

pub fn eval(a: EvalArgs, cfg: &RunConfig) -> Result<()> {
    let e = &cfg.eval;
    let lines = read_eval_lines(&a.input)?;
    let tok = a.tok.or(e.tokenizer).unwrap_or_default();
    let mut by_record: HashMap<String, Vec<_>> = HashMap::new();
    if let Some(path) = a.annotations.or_else(|| cfg.paths.annotations.clone()) {
        for ann in load_annotations(&path)? {
            by_record.entry(ann.record_id.clone()).or_default().push(ann);
        }
    }
    let mut ec = EvalConfig {
        per_record: a.per_record || e.per_record.unwrap_or(false),
        ..EvalConfig::default()
    };
    if let Some(cost) = e.term_cost {
        ec.ter.term_cost = cost;
    }
    if let Some(path) = a.stopwords.or_else(|| cfg.paths.stopwords.clone()) {
        ec.stopwords = parse_stopwords(&fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?);
    }
    let pairs: Vec<EvalPair> = lines
        .iter()
        .map(|l| EvalPair {
            record_id: l.record_id.clone(),
            hyp_tokens: tok.tokenize(&l.hyp),
            ref_tokens: tok.tokenize(&l.reference),
            annotations: by_record.get(&l.record_id).cloned().unwrap_or_default(),
        })
        .collect();
    let report = evaluate(&pairs, &ec)?;
    emit(a.out.output.as_deref(), &pretty(&report)?)
}

/// Writes evaluation lines, one JSON object each.
pub fn eval_lines_bytes(rows: &[EvalLine]) -> Result<Vec<u8>> {
    jsonl(rows)
}

/// Counts per split, for summaries.
pub fn split_counts(records: &[vmtlab_core::CorpusRecord]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for r in records {
        *m.entry(r.split.to_string()).or_insert(0) += 1;
    }
    m
}
