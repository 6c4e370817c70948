//! Subtitle-to-parallel-corpus pipeline.
//!
//! Raw bilingual subtitle chunks are merged into sentences, sentences are
//! packed into segments of bounded duration, and each segment is paired
//! with the clip interval of its video.

mod jsonl;
mod parse;
mod segment;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use jsonl::{read_corpus, write_corpus};
pub use parse::{parse_chunks, ChunkFormat, ParseOutcome, SkippedEntry, VideoChunks};
pub use segment::{
    attach_clips, build_records, merge_into_sentences, pack_segments, BuildConfig, DEFAULT_END_MARKS,
};

/// One timed subtitle entry carrying both languages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedChunk {
    /// Ordinal of the chunk among the entries kept from its file.
    pub index: usize,
    pub start_ms: i64,
    pub end_ms: i64,
    pub src_text: String,
    pub tgt_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub start_ms: i64,
    pub end_ms: i64,
    pub src_text: String,
    pub tgt_text: String,
    /// Range of chunk indices merged into this sentence.
    pub chunk_indices: Range<usize>,
    /// True when the sentence closed without an end mark.
    pub forced_break: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub start_ms: i64,
    pub end_ms: i64,
    pub src_text: String,
    pub tgt_text: String,
    pub sentence_count: usize,
    /// Positions of the packed sentences in the input sentence stream.
    pub sentences: Range<usize>,
}

impl Segment {
    pub fn duration_ms(&self) -> i64 {
        self.end_ms - self.start_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Split {
    #[default]
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "valid")]
    Valid,
    #[serde(rename = "test-ambiguous")]
    TestAmbiguous,
    #[serde(rename = "test-unambiguous")]
    TestUnambiguous,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::TestAmbiguous => "test-ambiguous",
            Split::TestUnambiguous => "test-unambiguous",
        }
    }

    pub fn is_test(self) -> bool {
        matches!(self, Split::TestAmbiguous | Split::TestUnambiguous)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test-ambiguous" => Ok(Split::TestAmbiguous),
            "test-unambiguous" => Ok(Split::TestUnambiguous),
            other => Err(crate::Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

/// A clip-aligned parallel sentence pair; one line of a corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub id: String,
    pub video_id: String,
    pub clip_start_ms: i64,
    pub clip_end_ms: i64,
    pub src: String,
    pub tgt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub split: Split,
}
