//! Video-guided Transformer translation at desk scale.
//!
//! The model, its losses and optimiser run on dense `f64` matrices with a
//! small reverse-mode differentiation tape, so training is deterministic
//! for a given seed and gradients can be checked in double precision.

mod checkpoint;
mod config;
mod data;
mod decode;
mod frames;
mod gradcheck;
mod loss;
mod network;
mod probe;
mod synth;
pub mod tape;
mod train;

pub use checkpoint::{Checkpoint, MAGIC as CHECKPOINT_MAGIC};
pub use config::{CeReduction, ModelConfig, NormStyle, PoolSource};
pub use data::{encode_records, Batch, Example, TextSpec, Vocab, BOS, EOS, PAD, SPECIALS, UNK};
pub use decode::{beam_decode, greedy_decode, translate_batch, BeamConfig, Hypothesis};
pub use frames::{
    read_feature_file, read_manifest, sample_frames, write_feature_file, write_manifest, FeatureMeta, FeatureSequence,
    ManifestEntry,
};
pub use gradcheck::{grad_check, rel_error, GradCheckReport, GroupCheck};
pub use loss::{ce_loss, ce_loss_padded, ctr_loss, CeOutput, CtrOutput, LossBreakdown, PooledProjection};
pub use network::{EncLayout, Forward, ParamStore, VmtModel};
pub use probe::{decode_and_evaluate, derangement, incongruent_probe, ProbeDelta, ProbeItem, ProbeReport};
pub use synth::{
    ambiguous_source, ambiguous_target, generate_toy_corpus, plain_source, plain_target, SynthConfig, ToyCorpus,
};
pub use train::{evaluate_loss, inverse_sqrt_lr, StepLog, TrainConfig, TrainState};
