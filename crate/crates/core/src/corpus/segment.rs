use super::{CorpusRecord, Segment, Sentence, Split, TimedChunk};
use crate::{Error, Result};

/// Sentence-final marks, ASCII and full-width.
pub const DEFAULT_END_MARKS: &[char] = &['.', '!', '?', '…', '。', '！', '？', '．'];

#[derive(Debug, Clone, PartialEq)]
pub struct BuildConfig {
    /// Largest gap between chunks that still counts as continuous.
    pub gap_ms: i64,
    pub end_marks: Vec<char>,
    pub max_duration_ms: i64,
    /// Largest gap between sentences that may be packed into one segment.
    pub pack_gap_ms: i64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            gap_ms: 500,
            end_marks: DEFAULT_END_MARKS.to_vec(),
            max_duration_ms: 15_000,
            pack_gap_ms: 500,
        }
    }
}

impl BuildConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gap_ms < 0 || self.pack_gap_ms < 0 {
            return Err(Error::Config("gap thresholds must be non-negative".into()));
        }
        if self.max_duration_ms <= 0 {
            return Err(Error::Config("max_duration_ms must be positive".into()));
        }
        if self.end_marks.is_empty() {
            return Err(Error::Config("end mark set is empty".into()));
        }
        Ok(())
    }
}

fn ends_with_mark(text: &str, marks: &[char]) -> bool {
    text.trim_end().chars().last().is_some_and(|c| marks.contains(&c))
}

fn join_src(acc: &mut String, next: &str) {
    let next = next.trim();
    if next.is_empty() {
        return;
    }
    if !acc.is_empty() {
        acc.push(' ');
    }
    acc.push_str(next);
}

fn join_tgt(acc: &mut String, next: &str) {
    acc.push_str(next.trim());
}

/// Greedily merges continuous chunks until the source side ends with an end
/// mark. Chunks are continuous when the next one starts at most `gap_ms`
/// after the current one ends.
pub fn merge_into_sentences(chunks: &[TimedChunk], gap_ms: i64, end_marks: &[char]) -> Vec<Sentence> {
    let mut out = Vec::new();
    let mut iter = chunks.iter().peekable();
    while let Some(first) = iter.next() {
        let mut sentence = Sentence {
            start_ms: first.start_ms,
            end_ms: first.end_ms,
            src_text: String::new(),
            tgt_text: String::new(),
            chunk_indices: first.index..first.index + 1,
            forced_break: false,
        };
        join_src(&mut sentence.src_text, &first.src_text);
        join_tgt(&mut sentence.tgt_text, &first.tgt_text);

        while !ends_with_mark(&sentence.src_text, end_marks) {
            match iter.peek() {
                Some(next) if next.start_ms - sentence.end_ms <= gap_ms => {
                    join_src(&mut sentence.src_text, &next.src_text);
                    join_tgt(&mut sentence.tgt_text, &next.tgt_text);
                    sentence.end_ms = sentence.end_ms.max(next.end_ms);
                    sentence.chunk_indices.end = next.index + 1;
                    iter.next();
                }
                _ => break,
            }
        }
        sentence.forced_break = !ends_with_mark(&sentence.src_text, end_marks);
        out.push(sentence);
    }
    out
}

/// Packs adjacent sentences while the packed span stays within
/// `max_duration_ms` and the gap to the next sentence is at most
/// `pack_gap_ms`. An oversize sentence forms a segment on its own.
pub fn pack_segments(sentences: &[Sentence], max_duration_ms: i64, pack_gap_ms: i64) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for (pos, s) in sentences.iter().enumerate() {
        if let Some(cur) = out.last_mut() {
            let gap = s.start_ms - cur.end_ms;
            let span = s.end_ms.max(cur.end_ms) - cur.start_ms;
            if gap <= pack_gap_ms && span <= max_duration_ms {
                join_src(&mut cur.src_text, &s.src_text);
                join_tgt(&mut cur.tgt_text, &s.tgt_text);
                cur.end_ms = cur.end_ms.max(s.end_ms);
                cur.sentence_count += 1;
                cur.sentences.end = pos + 1;
                continue;
            }
        }
        out.push(Segment {
            start_ms: s.start_ms,
            end_ms: s.end_ms,
            src_text: s.src_text.clone(),
            tgt_text: s.tgt_text.clone(),
            sentence_count: 1,
            sentences: pos..pos + 1,
        });
    }
    out
}

/// One record per segment, with id `<video_id>#<ordinal:06>`.
pub fn attach_clips(segments: &[Segment], video_id: &str) -> Result<Vec<CorpusRecord>> {
    if video_id.is_empty() {
        return Err(Error::invalid("video id must be non-empty"));
    }
    Ok(segments
        .iter()
        .enumerate()
        .map(|(i, seg)| CorpusRecord {
            id: format!("{video_id}#{i:06}"),
            video_id: video_id.to_string(),
            clip_start_ms: seg.start_ms,
            clip_end_ms: seg.end_ms,
            src: seg.src_text.clone(),
            tgt: seg.tgt_text.clone(),
            scores: None,
            category: None,
            split: Split::Train,
        })
        .collect())
}

/// Full chunk-to-record pipeline for one video.
pub fn build_records(chunks: &[TimedChunk], video_id: &str, config: &BuildConfig) -> Result<Vec<CorpusRecord>> {
    config.validate()?;
    let sentences = merge_into_sentences(chunks, config.gap_ms, &config.end_marks);
    let segments = pack_segments(&sentences, config.max_duration_ms, config.pack_gap_ms);
    attach_clips(&segments, video_id)
}
