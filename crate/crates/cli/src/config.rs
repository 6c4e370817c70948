//! Run configuration file. Every key is optional; command-line flags win
//! over the file, and `VMTLAB_SEED` wins over the file's `seed`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use vmtlab_core::metrics::Tokenizer;
use vmtlab_core::model::{CeReduction, ModelConfig, NormStyle, PoolSource, SynthConfig, TrainConfig};
use vmtlab_core::ScorerSpec;

pub const SEED_ENV: &str = "VMTLAB_SEED";

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub paths: Paths,
    pub build: BuildSection,
    pub filter: FilterSection,
    pub stats: StatsSection,
    pub eval: EvalSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub decode: DecodeSection,
    pub synth: SynthSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    /// Feature manifest (JSONL `{id, path}`).
    pub features: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildSection {
    pub format: Option<String>,
    pub gap_ms: Option<i64>,
    pub max_duration_ms: Option<i64>,
    pub pack_gap_ms: Option<i64>,
    /// Characters that end a sentence, written as one string.
    pub end_marks: Option<String>,
    pub split: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub max_failures: Option<i64>,
    pub scorers: Option<Vec<ScorerSpec>>,
    /// Built-in heuristic scorers to compute before filtering.
    pub heuristics: Option<Vec<String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSection {
    pub n_max: Option<usize>,
    pub lowercase: Option<bool>,
    pub strip_punctuation: Option<bool>,
    pub lexicon: Option<PathBuf>,
    pub keywords: Option<PathBuf>,
    pub group_size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub tokenizer: Option<Tokenizer>,
    pub per_record: Option<bool>,
    pub term_cost: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub enc_layers: Option<usize>,
    pub dec_layers: Option<usize>,
    pub heads: Option<usize>,
    pub d_model: Option<usize>,
    pub d_ffn: Option<usize>,
    pub max_text_len: Option<usize>,
    pub max_frames: Option<usize>,
    pub dropout: Option<f64>,
    pub label_smoothing: Option<f64>,
    pub tau: Option<f64>,
    pub alpha: Option<f64>,
    pub norm_style: Option<NormStyle>,
    pub pool_source: Option<PoolSource>,
    pub ce_reduction: Option<CeReduction>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub warmup_steps: Option<usize>,
    pub weight_decay: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub adam_eps: Option<f64>,
    pub clip_norm: Option<f64>,
    pub src_tokenizer: Option<Tokenizer>,
    pub tgt_tokenizer: Option<Tokenizer>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub beam: Option<usize>,
    pub length_penalty: Option<f64>,
    pub max_len: Option<usize>,
    pub split: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub size: Option<usize>,
    pub test_size: Option<usize>,
    pub ambiguity_rate: Option<f64>,
    pub plain_words: Option<usize>,
    pub ambiguous_words: Option<usize>,
    pub min_words: Option<usize>,
    pub max_words: Option<usize>,
    pub d_feature: Option<usize>,
    pub min_frames: Option<usize>,
    pub max_frames: Option<usize>,
    pub noise: Option<f64>,
}

/// Copies every `Some` field of `$src` onto the same field of `$dst`.
macro_rules! overlay {
    ($dst:expr, $src:expr, [$($field:ident),* $(,)?]) => {
        $(if let Some(v) = $src.$field.clone() { $dst.$field = v; })*
    };
}

impl RunConfig {
    /// Reads a TOML file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| anyhow::anyhow!(vmtlab_core::Error::Config(format!("{}: {e}", path.display()))))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(v) = p {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        };
        let p = &mut self.paths;
        for slot in [&mut p.corpus, &mut p.features, &mut p.annotations, &mut p.stopwords, &mut p.scores, &mut p.output_dir] {
            fix(slot);
        }
        fix(&mut self.stats.lexicon);
        fix(&mut self.stats.keywords);
    }

    /// Flag, then environment, then file.
    pub fn seed(&self, flag: Option<u64>) -> Result<Option<u64>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => match v.trim().parse() {
                Ok(s) => Ok(Some(s)),
                Err(_) => bail!(vmtlab_core::Error::Config(format!("{SEED_ENV} must be an unsigned integer, got `{v}`"))),
            },
            Err(_) => Ok(self.seed),
        }
    }

    pub fn model_config(&self, base: ModelConfig) -> ModelConfig {
        let mut m = base;
        overlay!(m, self.model, [
            enc_layers, dec_layers, heads, d_model, d_ffn, max_text_len, max_frames, dropout, label_smoothing, tau,
            alpha, norm_style, pool_source, ce_reduction,
        ]);
        m
    }

    pub fn train_config(&self, base: TrainConfig) -> TrainConfig {
        let mut t = base;
        overlay!(t, self.train, [steps, batch_size, lr, warmup_steps, weight_decay, beta1, beta2, adam_eps, clip_norm]);
        t
    }

    pub fn synth_config(&self, base: SynthConfig) -> SynthConfig {
        let mut s = base;
        overlay!(s, self.synth, [
            size, test_size, ambiguity_rate, plain_words, ambiguous_words, min_words, max_words, d_feature, min_frames,
            max_frames, noise,
        ]);
        s
    }
}

/// A path from a flag, or else from the config file.
pub fn required(flag: Option<PathBuf>, file: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| file.clone())
        .ok_or_else(|| anyhow::anyhow!(vmtlab_core::Error::Config(format!("missing {what}: pass the flag or set it in the config"))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("sed = 3").is_err());
        assert!(toml::from_str::<RunConfig>("[model]\nlayers = 3").is_err());
    }

    #[test]
    fn overlays_apply() {
        let cfg: RunConfig = toml::from_str("seed = 4\n[model]\nd_model = 32\n[train]\nsteps = 7").unwrap();
        assert_eq!(cfg.model_config(ModelConfig::desk(10, 10)).d_model, 32);
        assert_eq!(cfg.train_config(TrainConfig::desk()).steps, 7);
        assert_eq!(cfg.seed, Some(4));
    }

    #[test]
    fn scorer_specs_parse() {
        let cfg: RunConfig = toml::from_str(
            "[filter]\nmax_failures = 1\n[[filter.scorers]]\nname = \"comet\"\nthreshold = 0.1\norientation = \"higher-is-better\"",
        )
        .unwrap();
        assert_eq!(cfg.filter.scorers.unwrap()[0].name, "comet");
    }
}
