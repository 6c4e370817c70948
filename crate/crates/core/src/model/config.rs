use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormStyle {
    #[default]
    Post,
}

/// Where the contrastive objective reads modality representations from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolSource {
    #[default]
    EncoderOutput,
    InputEmbedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CeReduction {
    /// Mean over non-pad target tokens.
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    #[serde(default = "default_max_text_len")]
    pub max_text_len: usize,
    #[serde(default = "default_max_frames")]
    pub max_frames: usize,
    pub d_feature: usize,
    pub dropout: f64,
    #[serde(default = "default_label_smoothing")]
    pub label_smoothing: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub norm_style: NormStyle,
    #[serde(default)]
    pub pool_source: PoolSource,
    #[serde(default)]
    pub ce_reduction: CeReduction,
    pub seed: u64,
}

fn default_max_text_len() -> usize {
    256
}
fn default_max_frames() -> usize {
    12
}
fn default_label_smoothing() -> f64 {
    0.1
}
fn default_tau() -> f64 {
    0.002
}
fn default_alpha() -> f64 {
    1.0
}

impl ModelConfig {
    /// Two-layer encoder and decoder, 4 heads, width 64.
    pub fn desk(src_vocab: usize, tgt_vocab: usize) -> Self {
        Self {
            enc_layers: 2,
            dec_layers: 2,
            heads: 4,
            d_model: 64,
            d_ffn: 128,
            src_vocab,
            tgt_vocab,
            max_text_len: default_max_text_len(),
            max_frames: default_max_frames(),
            d_feature: 16,
            dropout: 0.1,
            label_smoothing: default_label_smoothing(),
            tau: default_tau(),
            alpha: default_alpha(),
            norm_style: NormStyle::Post,
            pool_source: PoolSource::EncoderOutput,
            ce_reduction: CeReduction::Mean,
            seed: 1,
        }
    }

    /// The full-size configuration: 6 + 6 layers, 8 heads, 512 / 2048.
    pub fn paper(src_vocab: usize, tgt_vocab: usize, d_feature: usize) -> Self {
        Self {
            enc_layers: 6,
            dec_layers: 6,
            heads: 8,
            d_model: 512,
            d_ffn: 2048,
            d_feature,
            ..Self::desk(src_vocab, tgt_vocab)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.heads == 0 || self.d_model == 0 || self.d_model % self.heads != 0 {
            return bad("d_model must be a positive multiple of heads");
        }
        if self.enc_layers == 0 || self.dec_layers == 0 || self.d_ffn == 0 || self.d_feature == 0 {
            return bad("layer counts and widths must be positive");
        }
        if self.src_vocab <= super::data::SPECIALS.len() || self.tgt_vocab <= super::data::SPECIALS.len() {
            return bad("vocabularies must hold more than the special tokens");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be non-negative");
        }
        if self.max_frames == 0 || self.max_text_len == 0 {
            return bad("max_frames and max_text_len must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("dropout and label_smoothing must lie in [0, 1)");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ModelConfig::desk(20, 20).validate().unwrap();
        ModelConfig::paper(20, 20, 768).validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let base = ModelConfig::desk(20, 20);
        for cfg in [
            ModelConfig { heads: 3, ..base.clone() },
            ModelConfig { tau: 0.0, ..base.clone() },
            ModelConfig { alpha: -1.0, ..base.clone() },
            ModelConfig { max_frames: 0, ..base.clone() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn json_defaults() {
        let json = r#"{"enc_layers":1,"dec_layers":1,"heads":2,"d_model":8,"d_ffn":16,
            "src_vocab":10,"tgt_vocab":10,"d_feature":4,"dropout":0.0,"seed":3}"#;
        let cfg: ModelConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.max_text_len, 256);
        assert_eq!(cfg.max_frames, 12);
        assert_eq!(cfg.tau, 0.002);
        assert_eq!(cfg.pool_source, PoolSource::EncoderOutput);
    }
}
