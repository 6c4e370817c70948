//! Model commands: train, translate, probe, synth.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;
use vmtlab_core::metrics::{EvalConfig, TermAnnotation};
use vmtlab_core::model::{
    encode_records, generate_toy_corpus, incongruent_probe, translate_batch, Batch, BeamConfig, Checkpoint, Example,
    ModelConfig, ProbeItem, SynthConfig, TextSpec, TrainConfig, TrainState, VmtModel, Vocab,
};
use vmtlab_core::{CorpusRecord, Error, LossBreakdown, Split};

use crate::config::{required, RunConfig};
use crate::data::{eval_lines_bytes, split_counts, EvalLine};
use crate::io::{detokenize, emit, load_annotations, load_corpus, load_features, pretty};

/// Corpus and feature manifest locations shared by the model commands.
#[derive(Args)]
pub struct DataArgs {
    #[arg(long, value_name = "FILE")]
    corpus: Option<PathBuf>,
    /// Feature manifest, JSONL `{id, path}`.
    #[arg(long, value_name = "FILE")]
    features: Option<PathBuf>,
}

impl DataArgs {
    fn resolve(self, cfg: &RunConfig) -> Result<(PathBuf, PathBuf)> {
        Ok((
            required(self.corpus, &cfg.paths.corpus, "--corpus")?,
            required(self.features, &cfg.paths.features, "--features")?,
        ))
    }
}

fn examples(
    records: &[CorpusRecord],
    manifest: &Path,
    src_vocab: &Vocab,
    tgt_vocab: &Vocab,
    text: TextSpec,
    max_text_len: usize,
) -> Result<Vec<Example>> {
    let features = load_features(manifest, records.iter().map(|r| r.id.as_str()))?;
    Ok(encode_records(records, &features, src_vocab, tgt_vocab, text, max_text_len)?)
}

fn select(records: Vec<CorpusRecord>, split: Option<Split>) -> Vec<CorpusRecord> {
    match split {
        Some(s) => records.into_iter().filter(|r| r.split == s).collect(),
        None => records,
    }
}

// ---------------------------------------------------------------- train

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Receives `model.ckpt` and `train_log.jsonl`.
    #[arg(long, value_name = "DIR")]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Contrastive loss weight.
    #[arg(long)]
    alpha: Option<f64>,
    /// Contrastive temperature.
    #[arg(long)]
    tau: Option<f64>,
    /// Replace every feature sequence with zeros (text-only control).
    #[arg(long)]
    zero_features: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Serialize)]
struct TrainSummary {
    records: usize,
    steps: usize,
    parameters: usize,
    src_vocab: usize,
    tgt_vocab: usize,
    last: Option<LossBreakdown>,
    checkpoint: PathBuf,
}

pub fn train(a: TrainArgs, cfg: &RunConfig) -> Result<()> {
    let (corpus, manifest) = a.data.resolve(cfg)?;
    let out_dir = required(a.output_dir, &cfg.paths.output_dir, "--output-dir")?;
    let seed = cfg.seed(a.seed)?;
    let text = TextSpec {
        src_tokenizer: cfg.train.src_tokenizer.unwrap_or_default(),
        tgt_tokenizer: cfg.train.tgt_tokenizer.unwrap_or_default(),
    };

    let records = select(load_corpus(&corpus)?, Some(Split::Train));
    if records.is_empty() {
        bail!(Error::InvalidInput(format!("{} has no training records", corpus.display())));
    }
    let src_tokens: Vec<Vec<String>> = records.iter().map(|r| text.src_tokens(&r.src)).collect();
    let tgt_tokens: Vec<Vec<String>> = records.iter().map(|r| text.tgt_tokens(&r.tgt)).collect();
    let src_vocab = Vocab::build(src_tokens.iter().map(Vec::as_slice));
    let tgt_vocab = Vocab::build(tgt_tokens.iter().map(Vec::as_slice));

    let mut mc = cfg.model_config(ModelConfig::desk(src_vocab.len(), tgt_vocab.len()));
    let mut tc = cfg.train_config(TrainConfig::desk());
    if let Some(s) = seed {
        mc.seed = s;
        tc.seed = s;
    }
    mc.alpha = a.alpha.unwrap_or(mc.alpha);
    mc.tau = a.tau.unwrap_or(mc.tau);
    tc.steps = a.steps.unwrap_or(tc.steps);
    tc.batch_size = a.batch_size.unwrap_or(tc.batch_size);
    tc.lr = a.lr.unwrap_or(tc.lr);

    let mut data = examples(&records, &manifest, &src_vocab, &tgt_vocab, text, mc.max_text_len)?;
    if a.zero_features {
        for e in &mut data {
            e.features = e.features.zeroed();
        }
    }
    mc.d_feature = data[0].features.dim();

    let model = VmtModel::new(mc)?;
    let parameters = model.params.total_size();
    let mut state = TrainState::new(model, tc)?;
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let log_path = out_dir.join("train_log.jsonl");
    let mut log = BufWriter::new(fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    let mut log_err = None;
    state.train(&data, |step| {
        if log_err.is_none() {
            if let Err(e) = serde_json::to_writer(&mut log, step).map_err(anyhow::Error::from).and_then(|_| Ok(log.write_all(b"\n")?)) {
                log_err = Some(e);
            }
        }
    })?;
    if let Some(e) = log_err {
        return Err(e.context("writing training log"));
    }
    log.flush()?;

    let last = if state.step > 0 {
        Some(vmtlab_core::model::evaluate_loss(&state.model, &data, state.config.batch_size)?)
    } else {
        None
    };
    let ckpt_path = out_dir.join("model.ckpt");
    let steps = state.step;
    let (n_src, n_tgt) = (src_vocab.len(), tgt_vocab.len());
    Checkpoint {
        model: state.model,
        src_vocab,
        tgt_vocab,
        text,
    }
    .save(&ckpt_path)?;
    let summary = TrainSummary {
        records: records.len(),
        steps,
        parameters,
        src_vocab: n_src,
        tgt_vocab: n_tgt,
        last,
        checkpoint: ckpt_path,
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

// ---------------------------------------------------------------- translate

/// Beam settings; defaults are beam 4 and length penalty 1.0.
#[derive(Args)]
pub struct DecodeArgs {
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    lenpen: Option<f64>,
    /// Output token budget (default `2 * source length + 10`).
    #[arg(long)]
    max_len: Option<usize>,
}

impl DecodeArgs {
    fn resolve(&self, cfg: &RunConfig) -> BeamConfig {
        let d = &cfg.decode;
        let base = BeamConfig::default();
        BeamConfig {
            beam: self.beam.or(d.beam).unwrap_or(base.beam),
            length_penalty: self.lenpen.or(d.length_penalty).unwrap_or(base.length_penalty),
            max_len: self.max_len.or(d.max_len),
        }
    }
}

#[derive(Args)]
pub struct TranslateArgs {
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Only decode records of this split.
    #[arg(long)]
    split: Option<Split>,
    #[command(flatten)]
    decode: DecodeArgs,
    /// JSONL `{record_id, hyp, ref}`, ready for `eval`.
    #[arg(short, long, value_name = "FILE")]
    output: Option<PathBuf>,
}

fn parse_split(flag: Option<Split>, file: &Option<String>) -> Result<Option<Split>> {
    match flag {
        Some(s) => Ok(Some(s)),
        None => Ok(file.as_deref().map(str::parse).transpose()?),
    }
}

pub fn translate(a: TranslateArgs, cfg: &RunConfig) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let (corpus, manifest) = a.data.resolve(cfg)?;
    let records = select(load_corpus(&corpus)?, parse_split(a.split, &cfg.decode.split)?);
    let beam = a.decode.resolve(cfg);
    let model = &ckpt.model;
    let data = examples(&records, &manifest, &ckpt.src_vocab, &ckpt.tgt_vocab, ckpt.text, model.config.max_text_len)?;

    let mut rows = Vec::with_capacity(data.len());
    for (chunk, recs) in data.chunks(16).zip(records.chunks(16)) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let hyps = translate_batch(model, &Batch::from_examples(&refs, model.config.max_frames)?, &beam)?;
        for (h, r) in hyps.iter().zip(recs) {
            rows.push(EvalLine {
                record_id: r.id.clone(),
                hyp: detokenize(&ckpt.tgt_vocab.decode(&h.tokens), ckpt.text.tgt_tokenizer),
                reference: r.tgt.clone(),
            });
        }
    }
    emit(a.output.as_deref(), &eval_lines_bytes(&rows)?)
}

// ---------------------------------------------------------------- probe

#[derive(Args)]
pub struct ProbeArgs {
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Term annotations (JSONL).
    #[arg(long, value_name = "FILE")]
    annotations: Option<PathBuf>,
    /// Split to probe (default `test-ambiguous`).
    #[arg(long)]
    split: Option<Split>,
    /// Seed of the mismatched-video assignment.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    decode: DecodeArgs,
    #[arg(short, long, value_name = "FILE")]
    output: Option<PathBuf>,
}

pub fn probe(a: ProbeArgs, cfg: &RunConfig) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let (corpus, manifest) = a.data.resolve(cfg)?;
    let split = parse_split(a.split, &cfg.decode.split)?.unwrap_or(Split::TestAmbiguous);
    let records = select(load_corpus(&corpus)?, Some(split));
    if records.len() < 2 {
        bail!(Error::InvalidInput(format!(
            "probing needs at least 2 `{split}` records, found {}",
            records.len()
        )));
    }
    let annotations: Vec<TermAnnotation> = match a.annotations.or_else(|| cfg.paths.annotations.clone()) {
        Some(p) => load_annotations(&p)?,
        None => Vec::new(),
    };
    let seed = cfg.seed(a.seed)?.unwrap_or(1);
    let beam = a.decode.resolve(cfg);
    let model = &ckpt.model;
    let data = examples(&records, &manifest, &ckpt.src_vocab, &ckpt.tgt_vocab, ckpt.text, model.config.max_text_len)?;
    let items: Vec<ProbeItem> = data
        .into_iter()
        .zip(&records)
        .map(|(example, r)| ProbeItem {
            reference: ckpt.text.tgt_tokens(&r.tgt),
            annotations: annotations.iter().filter(|x| x.record_id == r.id).cloned().collect(),
            example,
        })
        .collect();
    let report = incongruent_probe(model, &ckpt.tgt_vocab, &items, seed, &beam, &EvalConfig::default())?;
    emit(a.output.as_deref(), &pretty(&report)?)
}

// ---------------------------------------------------------------- synth

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    output_dir: Option<PathBuf>,
    /// Training sentences.
    #[arg(long)]
    size: Option<usize>,
    /// Sentences in each test split.
    #[arg(long)]
    test_size: Option<usize>,
    /// Fraction of training sentences containing an ambiguous word.
    #[arg(long)]
    ambiguity_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Serialize)]
struct SynthSummary {
    records: usize,
    splits: std::collections::BTreeMap<String, usize>,
    annotations: usize,
    output_dir: PathBuf,
}

pub fn synth(a: SynthArgs, cfg: &RunConfig) -> Result<()> {
    let out_dir = required(a.output_dir, &cfg.paths.output_dir, "--output-dir")?;
    let mut sc = cfg.synth_config(SynthConfig::default());
    if let Some(s) = cfg.seed(a.seed)? {
        sc.seed = s;
    }
    sc.size = a.size.unwrap_or(sc.size);
    sc.test_size = a.test_size.unwrap_or(sc.test_size);
    sc.ambiguity_rate = a.ambiguity_rate.unwrap_or(sc.ambiguity_rate);
    let toy = generate_toy_corpus(&sc)?;
    toy.write_to(&out_dir)?;
    let summary = SynthSummary {
        records: toy.records.len(),
        splits: split_counts(&toy.records),
        annotations: toy.annotations.len(),
        output_dir: out_dir,
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}
