//! Building blocks for video-guided machine translation experiments.
//!
//! * [`corpus`] turns timed bilingual subtitle chunks into clip-aligned
//!   parallel records.
//! * [`quality`] attaches quality-estimation scores and applies the
//!   threshold filter.
//! * [`diversity`] computes n-gram, part-of-speech and category statistics.
//! * [`metrics`] implements BLEU, Exact Match, Window Overlap and the
//!   terminology-weighted translation edit rate.
//! * [`model`] is a small CPU Transformer that encodes video frames and
//!   source text jointly and trains with cross entropy plus a cross-modal
//!   contrastive objective.

pub mod corpus;
pub mod diversity;
pub mod error;
pub mod metrics;
pub mod model;
pub mod quality;

pub use corpus::{CorpusRecord, Segment, Sentence, Split, TimedChunk};
pub use error::{Error, Result};
pub use metrics::{BleuReport, EvalPair, TermAnnotation, TermScores};
pub use model::{FeatureSequence, LossBreakdown, ModelConfig};
pub use quality::{Orientation, ScoreVector, ScorerSpec};
