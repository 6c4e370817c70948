//! Parameters and forward pass of the video-guided Transformer.
//!
//! Video frames are projected to the model width, given learned positions
//! and layer-normalised; source tokens get scaled embeddings plus
//! sinusoidal positions. Both are concatenated (video first) per sample
//! and fed through a post-norm encoder. The decoder attends causally to
//! its own prefix and to the whole encoder output.

use std::ops::Range;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::config::{ModelConfig, PoolSource};
use super::data::{Batch, BOS, PAD};
use super::loss::{ce_loss, ctr_loss, LossBreakdown, PooledProjection};
use super::tape::{AttnSegment, Gradients, Tape, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl ParamStore {
    fn add(&mut self, name: String, value: Array2<f64>) -> ParamId {
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Array2<f64>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn total_size(&self) -> usize {
        self.values.iter().map(Array2::len).sum()
    }
}

#[derive(Debug, Clone)]
struct AttnIds {
    wq: ParamId,
    bq: ParamId,
    /// Keys carry no bias: it would shift every score of a query equally
    /// and cancel in the softmax.
    wk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
}

#[derive(Debug, Clone)]
struct FfnIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
struct NormIds {
    g: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct EncLayer {
    attn: AttnIds,
    ln1: NormIds,
    ffn: FfnIds,
    ln2: NormIds,
}

#[derive(Debug, Clone)]
struct DecLayer {
    self_attn: AttnIds,
    ln1: NormIds,
    cross_attn: AttnIds,
    ln2: NormIds,
    ffn: FfnIds,
    ln3: NormIds,
}

#[derive(Debug, Clone)]
struct Ids {
    src_embed: ParamId,
    tgt_embed: ParamId,
    video_w: ParamId,
    video_b: ParamId,
    video_pos: ParamId,
    video_ln: NormIds,
    enc: Vec<EncLayer>,
    dec: Vec<DecLayer>,
    out_w: ParamId,
    out_b: ParamId,
    text_head: FfnIds,
    video_head: FfnIds,
}

struct Init {
    store: ParamStore,
    rng: ChaCha8Rng,
}

impl Init {
    fn xavier(&mut self, name: String, fan_in: usize, fan_out: usize) -> ParamId {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a).expect("valid bounds");
        let m = Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(&mut self.rng));
        self.store.add(name, m)
    }

    fn normal(&mut self, name: String, rows: usize, cols: usize, std: f64) -> ParamId {
        let dist = Normal::new(0.0, std).expect("positive std");
        let m = Array2::from_shape_simple_fn((rows, cols), || dist.sample(&mut self.rng));
        self.store.add(name, m)
    }

    fn constant(&mut self, name: String, cols: usize, v: f64) -> ParamId {
        self.store.add(name, Array2::from_elem((1, cols), v))
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> (ParamId, ParamId) {
        let w = self.xavier(format!("{name}.w"), fan_in, fan_out);
        let b = self.constant(format!("{name}.b"), fan_out, 0.0);
        (w, b)
    }

    fn attn(&mut self, name: &str, d: usize) -> AttnIds {
        let (wq, bq) = self.linear(&format!("{name}.q"), d, d);
        let wk = self.xavier(format!("{name}.k.w"), d, d);
        let (wv, bv) = self.linear(&format!("{name}.v"), d, d);
        let (wo, bo) = self.linear(&format!("{name}.out"), d, d);
        AttnIds { wq, bq, wk, wv, bv, wo, bo }
    }

    fn ffn(&mut self, name: &str, d_in: usize, d_hidden: usize, d_out: usize) -> FfnIds {
        let (w1, b1) = self.linear(&format!("{name}.fc1"), d_in, d_hidden);
        let (w2, b2) = self.linear(&format!("{name}.fc2"), d_hidden, d_out);
        FfnIds { w1, b1, w2, b2 }
    }

    fn norm(&mut self, name: &str, d: usize) -> NormIds {
        NormIds {
            g: self.constant(format!("{name}.gamma"), d, 1.0),
            b: self.constant(format!("{name}.beta"), d, 0.0),
        }
    }
}

/// Row ranges of one sample inside the stacked encoder sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncLayout {
    pub video: Range<usize>,
    pub text: Range<usize>,
}

impl EncLayout {
    pub fn all(&self) -> Range<usize> {
        self.video.start..self.text.end
    }
}

/// One decoder query sequence and the encoder rows it attends to.
#[derive(Debug, Clone)]
pub(crate) struct DecRequest {
    pub tokens: Vec<u32>,
    pub memory: Range<usize>,
}

pub(crate) struct Graph<'m, 'r> {
    pub tape: Tape,
    model: &'m VmtModel,
    bound: Vec<Option<Var>>,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl<'m, 'r> Graph<'m, 'r> {
    pub fn new(model: &'m VmtModel, rng: Option<&'r mut ChaCha8Rng>) -> Self {
        Self {
            tape: Tape::new(),
            model,
            bound: vec![None; model.params.len()],
            rng,
        }
    }

    fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.model.params.values[id.0].clone());
        self.bound[id.0] = Some(v);
        v
    }

    fn dropout(&mut self, x: Var) -> Var {
        let p = self.model.config.dropout;
        match self.rng.as_deref_mut() {
            Some(rng) if p > 0.0 => self.tape.dropout(x, p, rng),
            _ => x,
        }
    }

    fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Var {
        let (w, b) = (self.p(w), self.p(b));
        self.tape.linear(x, w, Some(b))
    }

    fn norm(&mut self, x: Var, ids: &NormIds) -> Var {
        let (g, b) = (self.p(ids.g), self.p(ids.b));
        self.tape.layer_norm(x, g, b)
    }

    fn ffn(&mut self, x: Var, ids: &FfnIds, inner_dropout: bool) -> Var {
        let h = self.linear(x, ids.w1, ids.b1);
        let h = self.tape.relu(h);
        let h = if inner_dropout { self.dropout(h) } else { h };
        self.linear(h, ids.w2, ids.b2)
    }

    fn mha(&mut self, q_in: Var, kv_in: Var, ids: &AttnIds, segments: Vec<AttnSegment>, causal: bool) -> Var {
        let q = self.linear(q_in, ids.wq, ids.bq);
        let wk = self.p(ids.wk);
        let k = self.tape.linear(kv_in, wk, None);
        let v = self.linear(kv_in, ids.wv, ids.bv);
        let a = self.tape.attention(q, k, v, segments, self.model.config.heads, causal);
        self.linear(a, ids.wo, ids.bo)
    }

    /// `norm(x + dropout(sub))`.
    fn residual(&mut self, x: Var, sub: Var, ids: &NormIds) -> Var {
        let sub = self.dropout(sub);
        let sum = self.tape.add(x, sub);
        self.norm(sum, ids)
    }

    fn positions(&mut self, lens: impl Iterator<Item = usize>) -> Var {
        let pe = &self.model.positions;
        let rows: Vec<usize> = lens.flat_map(|n| 0..n).collect();
        let mut m = Array2::zeros((rows.len(), pe.ncols()));
        for (i, &r) in rows.iter().enumerate() {
            m.row_mut(i).assign(&pe.row(r));
        }
        self.tape.leaf(m)
    }

    fn embed_tokens(&mut self, table: ParamId, seqs: &[&[u32]]) -> Var {
        let ids: Vec<usize> = seqs.iter().flat_map(|s| s.iter().map(|&t| t as usize)).collect();
        let t = self.p(table);
        let e = self.tape.gather(t, ids);
        let e = self.tape.scale(e, (self.model.config.d_model as f64).sqrt());
        let pos = self.positions(seqs.iter().map(|s| s.len()));
        self.tape.add(e, pos)
    }

    /// Builds the concatenated encoder input. Returns the input and the
    /// per-sample layout.
    pub fn embed_inputs(&mut self, src: &[&[u32]], frames: &[&Array2<f64>]) -> Result<(Var, Vec<EncLayout>)> {
        let cfg = &self.model.config;
        let ids = &self.model.ids;
        if src.len() != frames.len() || src.is_empty() {
            return Err(Error::Shape("batch needs matching, non-empty text and video inputs".into()));
        }
        for (i, (s, f)) in src.iter().zip(frames).enumerate() {
            if s.is_empty() {
                return Err(Error::invalid(format!("empty source in sample {i}")));
            }
            if s.len() > cfg.max_text_len {
                return Err(Error::invalid(format!(
                    "sample {i}: {} source tokens exceed max_text_len {}",
                    s.len(),
                    cfg.max_text_len
                )));
            }
            if let Some(&t) = s.iter().find(|&&t| t as usize >= cfg.src_vocab) {
                return Err(Error::invalid(format!("sample {i}: source id {t} outside vocabulary")));
            }
            if f.nrows() == 0 || f.nrows() > cfg.max_frames {
                return Err(Error::invalid(format!(
                    "sample {i}: {} frames, expected 1..={}",
                    f.nrows(),
                    cfg.max_frames
                )));
            }
            if f.ncols() != cfg.d_feature {
                return Err(Error::Shape(format!(
                    "sample {i}: feature dim {} but model expects {}",
                    f.ncols(),
                    cfg.d_feature
                )));
            }
        }

        let total_frames: usize = frames.iter().map(|f| f.nrows()).sum();
        let mut stacked = Array2::zeros((total_frames, cfg.d_feature));
        let mut at = 0;
        for f in frames {
            stacked.slice_mut(ndarray::s![at..at + f.nrows(), ..]).assign(f);
            at += f.nrows();
        }
        let feats = self.tape.leaf(stacked);
        let proj = self.linear(feats, ids.video_w, ids.video_b);
        let pos_table = self.p(ids.video_pos);
        let vpos = self.tape.gather(pos_table, frames.iter().flat_map(|f| 0..f.nrows()).collect());
        let video = self.tape.add(proj, vpos);
        let video = self.norm(video, &ids.video_ln);
        let video = self.dropout(video);

        let text = self.embed_tokens(ids.src_embed, src);
        let text = self.dropout(text);

        let mut parts = Vec::with_capacity(2 * src.len());
        let mut layout = Vec::with_capacity(src.len());
        let (mut vat, mut tat, mut row) = (0, 0, 0);
        for (s, f) in src.iter().zip(frames) {
            let (nv, nt) = (f.nrows(), s.len());
            parts.push((video, vat..vat + nv));
            parts.push((text, tat..tat + nt));
            layout.push(EncLayout {
                video: row..row + nv,
                text: row + nv..row + nv + nt,
            });
            vat += nv;
            tat += nt;
            row += nv + nt;
        }
        Ok((self.tape.rows(parts), layout))
    }

    pub fn encode(&mut self, input: Var, layout: &[EncLayout]) -> Var {
        let ids = self.model.ids.clone();
        let segments: Vec<AttnSegment> = layout
            .iter()
            .map(|l| AttnSegment {
                queries: l.all(),
                keys: l.all(),
            })
            .collect();
        let mut x = input;
        for layer in &ids.enc {
            let a = self.mha(x, x, &layer.attn, segments.clone(), false);
            x = self.residual(x, a, &layer.ln1);
            let f = self.ffn(x, &layer.ffn, true);
            x = self.residual(x, f, &layer.ln2);
        }
        x
    }

    /// Decoder hidden states for every request, stacked.
    pub fn decode(&mut self, memory: Var, requests: &[DecRequest]) -> Result<Var> {
        let cfg = &self.model.config;
        for r in requests {
            if r.tokens.is_empty() || r.tokens.len() > cfg.max_text_len {
                return Err(Error::invalid(format!(
                    "decoder input of length {} outside 1..={}",
                    r.tokens.len(),
                    cfg.max_text_len
                )));
            }
            if let Some(&t) = r.tokens.iter().find(|&&t| t as usize >= cfg.tgt_vocab) {
                return Err(Error::invalid(format!("target id {t} outside vocabulary")));
            }
        }
        let ids = self.model.ids.clone();
        let seqs: Vec<&[u32]> = requests.iter().map(|r| r.tokens.as_slice()).collect();
        let x = self.embed_tokens(ids.tgt_embed, &seqs);
        let mut x = self.dropout(x);

        let mut own = Vec::with_capacity(requests.len());
        let mut cross = Vec::with_capacity(requests.len());
        let mut at = 0;
        for r in requests {
            let q = at..at + r.tokens.len();
            own.push(AttnSegment {
                queries: q.clone(),
                keys: q.clone(),
            });
            cross.push(AttnSegment {
                queries: q,
                keys: r.memory.clone(),
            });
            at += r.tokens.len();
        }
        for layer in &ids.dec {
            let a = self.mha(x, x, &layer.self_attn, own.clone(), true);
            x = self.residual(x, a, &layer.ln1);
            let c = self.mha(x, memory, &layer.cross_attn, cross.clone(), false);
            x = self.residual(x, c, &layer.ln2);
            let f = self.ffn(x, &layer.ffn, true);
            x = self.residual(x, f, &layer.ln3);
        }
        Ok(x)
    }

    pub fn output_logits(&mut self, hidden: Var) -> Var {
        let (w, b) = (self.model.ids.out_w, self.model.ids.out_b);
        self.linear(hidden, w, b)
    }

    /// Masked means over each modality's rows, then the two projection
    /// heads. Returns (text, video) projections.
    pub fn pool_and_project(&mut self, states: Var, layout: &[EncLayout]) -> Result<(Var, Var)> {
        if layout.iter().any(|l| l.text.is_empty() || l.video.is_empty()) {
            return Err(Error::invalid("cannot pool a modality with no positions"));
        }
        let ids = self.model.ids.clone();
        let text = self.tape.segment_mean(states, layout.iter().map(|l| l.text.clone()).collect());
        let video = self.tape.segment_mean(states, layout.iter().map(|l| l.video.clone()).collect());
        let text = self.ffn(text, &ids.text_head, false);
        let video = self.ffn(video, &ids.video_head, false);
        Ok((text, video))
    }
}

/// Unpacked batch rows: source, decoder input, targets, frames.
struct Rows<'b> {
    src: Vec<Vec<u32>>,
    dec_in: Vec<Vec<u32>>,
    targets: Vec<Vec<u32>>,
    frames: Vec<&'b Array2<f64>>,
}

fn unpack(batch: &Batch) -> Result<Rows<'_>> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if batch.features.len() != batch.len() || batch.src_ids.nrows() != batch.len() || batch.tgt_ids.nrows() != batch.len() {
        return Err(Error::Shape("batch fields disagree on N".into()));
    }
    let mut rows = Rows {
        src: Vec::new(),
        dec_in: Vec::new(),
        targets: Vec::new(),
        frames: batch.features.iter().map(|f| &f.data).collect(),
    };
    for i in 0..batch.len() {
        rows.src.push(batch.src_tokens(i)?);
        let tgt = batch.tgt_tokens(i)?;
        if tgt.is_empty() {
            return Err(Error::invalid(format!("sample {i} has no target tokens")));
        }
        rows.dec_in.push(std::iter::once(BOS).chain(tgt[..tgt.len() - 1].iter().copied()).collect());
        rows.targets.push(tgt);
    }
    Ok(rows)
}

/// The model: configuration, parameters and cached positional encodings.
#[derive(Debug, Clone, PartialEq)]
pub struct VmtModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    ids: Ids,
    positions: Array2<f64>,
}

impl PartialEq for Ids {
    fn eq(&self, _: &Self) -> bool {
        // Identifiers are a pure function of the configuration.
        true
    }
}

fn sinusoids(len: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, d), |(pos, i)| {
        let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

pub struct Forward {
    pub breakdown: LossBreakdown,
    pub grads: Option<Vec<Array2<f64>>>,
}

impl VmtModel {
    /// Randomly initialised model, seeded by `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut init = Init {
            store: ParamStore::default(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        };
        let embed_std = (d as f64).powf(-0.5);
        let src_embed = init.normal("src_embed".into(), config.src_vocab, d, embed_std);
        let tgt_embed = init.normal("tgt_embed".into(), config.tgt_vocab, d, embed_std);
        for id in [src_embed, tgt_embed] {
            init.store.values[id.0].row_mut(PAD as usize).fill(0.0);
        }
        let (video_w, video_b) = init.linear("video.proj", config.d_feature, d);
        let video_pos = init.normal("video.pos".into(), config.max_frames, d, 0.02);
        let video_ln = init.norm("video.ln", d);
        let enc = (0..config.enc_layers)
            .map(|l| EncLayer {
                attn: init.attn(&format!("enc.{l}.attn"), d),
                ln1: init.norm(&format!("enc.{l}.ln1"), d),
                ffn: init.ffn(&format!("enc.{l}.ffn"), d, config.d_ffn, d),
                ln2: init.norm(&format!("enc.{l}.ln2"), d),
            })
            .collect();
        let dec = (0..config.dec_layers)
            .map(|l| DecLayer {
                self_attn: init.attn(&format!("dec.{l}.self_attn"), d),
                ln1: init.norm(&format!("dec.{l}.ln1"), d),
                cross_attn: init.attn(&format!("dec.{l}.cross_attn"), d),
                ln2: init.norm(&format!("dec.{l}.ln2"), d),
                ffn: init.ffn(&format!("dec.{l}.ffn"), d, config.d_ffn, d),
                ln3: init.norm(&format!("dec.{l}.ln3"), d),
            })
            .collect();
        let (out_w, out_b) = init.linear("out", d, config.tgt_vocab);
        let text_head = init.ffn("head.text", d, d, d);
        let video_head = init.ffn("head.video", d, d, d);

        let ids = Ids {
            src_embed,
            tgt_embed,
            video_w,
            video_b,
            video_pos,
            video_ln,
            enc,
            dec,
            out_w,
            out_b,
            text_head,
            video_head,
        };
        let positions = sinusoids(config.max_text_len + 1, d);
        Ok(Self {
            config,
            params: init.store,
            ids,
            positions,
        })
    }

    /// Rebuilds a model from saved parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: Vec<(String, Array2<f64>)>) -> Result<Self> {
        let mut model = Self::new(config)?;
        if params.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for (i, (name, value)) in params.into_iter().enumerate() {
            if name != model.params.names[i] || value.dim() != model.params.values[i].dim() {
                return Err(Error::Checkpoint(format!(
                    "tensor {i}: expected `{}` {:?}, found `{name}` {:?}",
                    model.params.names[i],
                    model.params.values[i].dim(),
                    value.dim()
                )));
            }
            if value.iter().any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!("tensor `{name}` is not finite")));
            }
            model.params.values[i] = value;
        }
        Ok(model)
    }

    /// The concatenated, video-first encoder input and its layout.
    pub fn embed_inputs(&self, batch: &Batch) -> Result<(Array2<f64>, Vec<EncLayout>)> {
        let rows = unpack(batch)?;
        let mut g = Graph::new(self, None);
        let src: Vec<&[u32]> = rows.src.iter().map(Vec::as_slice).collect();
        let (x, layout) = g.embed_inputs(&src, &rows.frames)?;
        Ok((g.tape.value(x).clone(), layout))
    }

    /// Pooled projections without dropout.
    pub fn pool_and_project(&self, batch: &Batch, source: PoolSource) -> Result<PooledProjection> {
        let rows = unpack(batch)?;
        let mut g = Graph::new(self, None);
        let src: Vec<&[u32]> = rows.src.iter().map(Vec::as_slice).collect();
        let (x, layout) = g.embed_inputs(&src, &rows.frames)?;
        let states = match source {
            PoolSource::EncoderOutput => g.encode(x, &layout),
            PoolSource::InputEmbedding => x,
        };
        let (t, v) = g.pool_and_project(states, &layout)?;
        Ok(PooledProjection {
            text: g.tape.value(t).clone(),
            video: g.tape.value(v).clone(),
        })
    }

    /// Loss of a batch; gradients (one per parameter, in store order) when
    /// `with_grads`. Dropout applies only when `rng` is given.
    pub fn forward(&self, batch: &Batch, rng: Option<&mut ChaCha8Rng>, with_grads: bool) -> Result<Forward> {
        let rows = unpack(batch)?;
        let cfg = &self.config;
        let mut g = Graph::new(self, rng);
        let src: Vec<&[u32]> = rows.src.iter().map(Vec::as_slice).collect();
        let (input, layout) = g.embed_inputs(&src, &rows.frames)?;
        let enc = g.encode(input, &layout);

        let requests: Vec<DecRequest> = rows
            .dec_in
            .iter()
            .zip(&layout)
            .map(|(t, l)| DecRequest {
                tokens: t.clone(),
                memory: l.all(),
            })
            .collect();
        let hidden = g.decode(enc, &requests)?;
        let logits = g.output_logits(hidden);
        let targets: Vec<u32> = rows.targets.concat();
        let ce = ce_loss(g.tape.value(logits).view(), &targets, cfg.label_smoothing, cfg.ce_reduction)?;
        let ce_var = g.tape.loss(ce.loss, vec![logits], vec![ce.grad]);

        let pool_src = match cfg.pool_source {
            PoolSource::EncoderOutput => enc,
            PoolSource::InputEmbedding => input,
        };
        let (pt, pv) = g.pool_and_project(pool_src, &layout)?;
        let pooled = PooledProjection {
            text: g.tape.value(pt).clone(),
            video: g.tape.value(pv).clone(),
        };
        let ctr = ctr_loss(&pooled, cfg.tau)?;
        let ctr_var = g.tape.loss(ctr.loss, vec![pt, pv], vec![ctr.grad_text, ctr.grad_video]);
        let total = g.tape.weighted_sum(vec![(ce_var, 1.0), (ctr_var, cfg.alpha)]);

        let breakdown = LossBreakdown {
            ce: ce.loss,
            ctr: ctr.loss,
            total: g.tape.scalar(total),
            nll: ce.nll,
            tokens: ce.tokens,
        };
        let grads = with_grads.then(|| {
            let gr: Gradients = g.tape.backward(total);
            g.bound
                .iter()
                .zip(&self.params.values)
                .map(|(b, p)| b.and_then(|v| gr.get(v).cloned()).unwrap_or_else(|| Array2::zeros(p.dim())))
                .collect()
        });
        Ok(Forward { breakdown, grads })
    }

    /// Loss without dropout or gradients.
    pub fn total_loss(&self, batch: &Batch) -> Result<LossBreakdown> {
        Ok(self.forward(batch, None, false)?.breakdown)
    }

    /// Encoder output for one sample, used by the decoders.
    pub(crate) fn encode_one(&self, src: &[u32], frames: &Array2<f64>) -> Result<Array2<f64>> {
        let mut g = Graph::new(self, None);
        let (x, layout) = g.embed_inputs(&[src], &[frames])?;
        let enc = g.encode(x, &layout);
        Ok(g.tape.value(enc).clone())
    }

    /// Next-token log-probabilities for several prefixes sharing one
    /// encoder memory. One row per prefix.
    pub(crate) fn next_log_probs(&self, memory: &Array2<f64>, prefixes: &[Vec<u32>]) -> Result<Array2<f64>> {
        let mut g = Graph::new(self, None);
        let mem = g.tape.leaf(memory.clone());
        let requests: Vec<DecRequest> = prefixes
            .iter()
            .map(|p| DecRequest {
                tokens: p.clone(),
                memory: 0..memory.nrows(),
            })
            .collect();
        let hidden = g.decode(mem, &requests)?;
        let mut last = Vec::with_capacity(prefixes.len());
        let mut at = 0;
        for p in prefixes {
            at += p.len();
            last.push((hidden, at - 1..at));
        }
        let last = g.tape.rows(last);
        let logits = g.output_logits(last);
        let mut out = g.tape.value(logits).clone();
        for mut row in out.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row -= lse;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::data::{Example, EOS};
    use crate::model::frames::FeatureSequence;
    use ndarray::Axis;
    use rand_distr::StandardNormal;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            enc_layers: 1,
            dec_layers: 1,
            heads: 2,
            d_model: 8,
            d_ffn: 16,
            src_vocab: 10,
            tgt_vocab: 9,
            max_text_len: 16,
            max_frames: 6,
            d_feature: 3,
            dropout: 0.0,
            alpha: 1.0,
            tau: 0.5,
            ..ModelConfig::desk(10, 9)
        }
    }

    fn example(id: &str, src: Vec<u32>, tgt: Vec<u32>, frames: usize, seed: u64) -> Example {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array2::from_shape_simple_fn((frames, 3), || StandardNormal.sample(&mut rng));
        Example {
            id: id.into(),
            src,
            tgt,
            features: FeatureSequence::new(id, data).unwrap(),
        }
    }

    fn batch() -> Batch {
        let a = example("a", vec![4, 5, 6, 7], vec![4, 5], 3, 1);
        let b = example("b", vec![8, 9], vec![6, 7, 8], 5, 2);
        Batch::from_examples(&[&a, &b], 6).unwrap()
    }

    #[test]
    fn encoder_input_is_video_first() {
        let m = VmtModel::new(tiny_config()).unwrap();
        let a = example("a", vec![4, 5, 6, 7], vec![4], 3, 1);
        let b = Batch::from_examples(&[&a], 6).unwrap();
        let (x, layout) = m.embed_inputs(&b).unwrap();
        assert_eq!(x.nrows(), 7);
        assert_eq!(layout[0], EncLayout { video: 0..3, text: 3..7 });
    }

    #[test]
    fn embed_rejects_bad_inputs() {
        let m = VmtModel::new(tiny_config()).unwrap();
        let mut b = batch();
        b.src_ids.row_mut(1).fill(PAD);
        assert!(m.embed_inputs(&b).unwrap_err().to_string().contains("empty source"));

        let mut b = batch();
        b.features[0] = FeatureSequence::new("a", Array2::zeros((2, 4))).unwrap();
        assert!(matches!(m.embed_inputs(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn total_is_ce_plus_weighted_ctr() {
        for alpha in [0.0, 0.37, 1.0, 1.9] {
            let m = VmtModel::new(ModelConfig { alpha, ..tiny_config() }).unwrap();
            let l = m.total_loss(&batch()).unwrap();
            assert!(l.ce >= 0.0 && l.ctr >= 0.0);
            assert!((l.total - (l.ce + alpha * l.ctr)).abs() <= 1e-9);
            if alpha == 0.0 {
                assert_eq!(l.total, l.ce);
            }
        }
    }

    #[test]
    fn single_sample_has_no_contrastive_loss() {
        let m = VmtModel::new(tiny_config()).unwrap();
        let a = example("a", vec![4, 5], vec![4], 2, 1);
        let l = m.total_loss(&Batch::from_examples(&[&a], 6).unwrap()).unwrap();
        assert_eq!(l.ctr, 0.0);
        assert_eq!(l.total, l.ce);
    }

    #[test]
    fn pooling_matches_hand_computed_mean() {
        let m = VmtModel::new(tiny_config()).unwrap();
        let b = batch();
        let (x, layout) = m.embed_inputs(&b).unwrap();
        let got = m.pool_and_project(&b, PoolSource::InputEmbedding).unwrap();
        let head = |v: ndarray::ArrayView1<f64>, prefix: &str| {
            let p = |n: &str| m.params.get(&format!("{prefix}.{n}")).unwrap();
            let h = (v.dot(p("fc1.w")) + p("fc1.b").row(0)).mapv(|a| a.max(0.0));
            h.dot(p("fc2.w")) + p("fc2.b").row(0)
        };
        for (i, l) in layout.iter().enumerate() {
            let tm = x.slice(ndarray::s![l.text.clone(), ..]).mean_axis(Axis(0)).unwrap();
            let vm = x.slice(ndarray::s![l.video.clone(), ..]).mean_axis(Axis(0)).unwrap();
            let et = head(tm.view(), "head.text");
            let ev = head(vm.view(), "head.video");
            for j in 0..8 {
                assert!((got.text[[i, j]] - et[j]).abs() < 1e-12);
                assert!((got.video[[i, j]] - ev[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_frame_pooling_is_identity() {
        let m = VmtModel::new(tiny_config()).unwrap();
        let a = example("a", vec![4], vec![4], 1, 3);
        let b = Batch::from_examples(&[&a], 6).unwrap();
        let (x, _) = m.embed_inputs(&b).unwrap();
        let pooled = m.pool_and_project(&b, PoolSource::InputEmbedding).unwrap();
        let p = |n: &str| m.params.get(&format!("head.video.{n}")).unwrap();
        let h = (x.row(0).dot(p("fc1.w")) + p("fc1.b").row(0)).mapv(|a| a.max(0.0));
        let expect = h.dot(p("fc2.w")) + p("fc2.b").row(0);
        assert!(pooled.video.row(0).iter().zip(&expect).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn duplicated_frames_pool_like_one_copy() {
        // Identical frames at different positions differ only by the learned
        // position vectors, which are zeroed here.
        let mut m = VmtModel::new(tiny_config()).unwrap();
        let i = m.params.index_of("video.pos").unwrap();
        m.params.values_mut()[i].fill(0.0);
        let one = example("a", vec![4, 5], vec![4], 1, 3);
        let mut two = one.clone();
        two.features.data = ndarray::concatenate(Axis(0), &[one.features.data.view(), one.features.data.view()]).unwrap();
        let p1 = m.pool_and_project(&Batch::from_examples(&[&one], 6).unwrap(), PoolSource::InputEmbedding).unwrap();
        let p2 = m.pool_and_project(&Batch::from_examples(&[&two], 6).unwrap(), PoolSource::InputEmbedding).unwrap();
        assert!(p1.video.iter().zip(&p2.video).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn loss_ignores_extra_padding() {
        let m = VmtModel::new(tiny_config()).unwrap();
        let b = batch();
        let l1 = m.total_loss(&b).unwrap();
        let l2 = m.total_loss(&b.with_extra_padding(4)).unwrap();
        assert_eq!(l1, l2);
    }

    #[test]
    fn log_probs_are_normalised() {
        let m = VmtModel::new(tiny_config()).unwrap();
        let e = example("a", vec![4, 5], vec![4], 2, 1);
        let mem = m.encode_one(&e.src, &e.features.data).unwrap();
        let lp = m.next_log_probs(&mem, &[vec![BOS], vec![BOS, 5, EOS]]).unwrap();
        for row in lp.rows() {
            assert!((row.mapv(f64::exp).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sinusoid_layout() {
        let pe = sinusoids(3, 4);
        assert_eq!(pe[[0, 0]], 0.0);
        assert_eq!(pe[[0, 1]], 1.0);
        assert!((pe[[1, 2]] - (1.0f64 / 100.0).sin()).abs() < 1e-15);
    }
}
