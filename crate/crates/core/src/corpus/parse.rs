use std::io::BufRead;
use std::str::FromStr;

use super::TimedChunk;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChunkFormat {
    /// Numbered blocks: index, `HH:MM:SS,mmm --> HH:MM:SS,mmm`, English line,
    /// Chinese line, blank separator.
    SrtLike,
    /// `start_ms<TAB>end_ms<TAB>src<TAB>tgt<TAB>video_id`.
    Tsv,
}

impl FromStr for ChunkFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "srt" | "srt-like" => Ok(ChunkFormat::SrtLike),
            "tsv" => Ok(ChunkFormat::Tsv),
            other => Err(Error::invalid(format!("unknown chunk format `{other}`"))),
        }
    }
}

/// Chunks belonging to one video. SRT-like input carries no video id; the
/// caller names the video (usually after the file).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoChunks {
    pub video_id: Option<String>,
    pub chunks: Vec<TimedChunk>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedEntry {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseOutcome {
    pub videos: Vec<VideoChunks>,
    pub skipped: Vec<SkippedEntry>,
}

impl ParseOutcome {
    pub fn chunk_count(&self) -> usize {
        self.videos.iter().map(|v| v.chunks.len()).sum()
    }
}

pub fn parse_chunks<R: BufRead>(reader: R, format: ChunkFormat) -> Result<ParseOutcome> {
    let mut lines = Vec::new();
    for line in reader.lines() {
        lines.push(line?);
    }
    match format {
        ChunkFormat::SrtLike => parse_srt(&lines),
        ChunkFormat::Tsv => parse_tsv(&lines),
    }
}

fn parse_srt(lines: &[String]) -> Result<ParseOutcome> {
    let mut out = ParseOutcome::default();
    let mut chunks: Vec<TimedChunk> = Vec::new();
    let mut entry = 0usize;
    let mut i = 0usize;

    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let block_start = i;
        while i < lines.len() && !lines[i].trim().is_empty() {
            i += 1;
        }
        let block: Vec<&str> = lines[block_start..i]
            .iter()
            .map(|l| l.trim().trim_start_matches('\u{feff}'))
            .collect();
        entry += 1;

        // The numeric index line is optional.
        let (ts_offset, label) = if is_arrow_line(block[0]) {
            (0, entry.to_string())
        } else {
            (1, block[0].to_string())
        };
        let ts_line_no = block_start + ts_offset + 1;
        let Some(ts_line) = block.get(ts_offset) else {
            return Err(Error::Parse {
                line: ts_line_no,
                message: format!("entry {label}: missing timestamp line"),
            });
        };
        let (start_ms, end_ms) = parse_time_range(ts_line).ok_or_else(|| Error::Parse {
            line: ts_line_no,
            message: format!("entry {label}: malformed timestamp `{ts_line}`"),
        })?;
        if end_ms < start_ms {
            return Err(Error::Parse {
                line: ts_line_no,
                message: format!("entry {label}: end time precedes start time"),
            });
        }

        let text = &block[ts_offset + 1..];
        if text.len() < 2 {
            out.skipped.push(SkippedEntry {
                line: block_start + 1,
                reason: format!("entry {label}: expected an English and a Chinese line"),
            });
            continue;
        }
        let (src_lines, tgt_line) = text.split_at(text.len() - 1);
        let chunk = TimedChunk {
            index: chunks.len(),
            start_ms,
            end_ms,
            src_text: src_lines.join(" "),
            tgt_text: tgt_line[0].to_string(),
        };
        check_order(chunks.last(), &chunk, ts_line_no, &label)?;
        chunks.push(chunk);
    }

    out.videos.push(VideoChunks { video_id: None, chunks });
    Ok(out)
}

fn parse_tsv(lines: &[String]) -> Result<ParseOutcome> {
    let mut out = ParseOutcome::default();
    for (no, raw) in lines.iter().enumerate() {
        let line_no = no + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if no == 0 && fields.first().map(|f| f.trim()) == Some("start_ms") {
            continue;
        }
        if fields.len() != 5 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 5 tab-separated columns, found {}", fields.len()),
            });
        }
        let parse_ms = |s: &str| {
            s.trim().parse::<i64>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("malformed timestamp `{s}`"),
            })
        };
        let start_ms = parse_ms(fields[0])?;
        let end_ms = parse_ms(fields[1])?;
        if end_ms < start_ms {
            return Err(Error::Parse {
                line: line_no,
                message: "end time precedes start time".into(),
            });
        }
        let video_id = fields[4].trim();
        if video_id.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty video id".into(),
            });
        }
        let (src, tgt) = (fields[2].trim(), fields[3].trim());
        if src.is_empty() || tgt.is_empty() {
            out.skipped.push(SkippedEntry {
                line: line_no,
                reason: "missing one of the two language columns".into(),
            });
            continue;
        }

        let pos = match out
            .videos
            .iter()
            .position(|v| v.video_id.as_deref() == Some(video_id))
        {
            Some(p) => p,
            None => {
                out.videos.push(VideoChunks {
                    video_id: Some(video_id.to_string()),
                    chunks: Vec::new(),
                });
                out.videos.len() - 1
            }
        };
        let chunks = &mut out.videos[pos].chunks;
        let chunk = TimedChunk {
            index: chunks.len(),
            start_ms,
            end_ms,
            src_text: src.to_string(),
            tgt_text: tgt.to_string(),
        };
        check_order(chunks.last(), &chunk, line_no, &line_no.to_string())?;
        chunks.push(chunk);
    }
    Ok(out)
}

fn check_order(prev: Option<&TimedChunk>, next: &TimedChunk, line: usize, label: &str) -> Result<()> {
    match prev {
        Some(p) if next.start_ms < p.start_ms => Err(Error::Parse {
            line,
            message: format!("entry {label}: starts before the previous entry"),
        }),
        _ => Ok(()),
    }
}

fn is_arrow_line(line: &str) -> bool {
    line.contains("-->") || line.contains('→')
}

fn parse_time_range(line: &str) -> Option<(i64, i64)> {
    let (a, b) = line
        .split_once("-->")
        .or_else(|| line.split_once('→'))?;
    Some((parse_timestamp(a.trim())?, parse_timestamp(b.trim())?))
}

/// `HH:MM:SS,mmm` (a `.` separator is accepted too) to milliseconds.
fn parse_timestamp(s: &str) -> Option<i64> {
    let (hms, millis) = s.split_once(',').or_else(|| s.split_once('.'))?;
    let mut parts = hms.split(':');
    let h = parse_digits(parts.next()?)?;
    let m = parse_digits(parts.next()?)?;
    let sec = parse_digits(parts.next()?)?;
    if parts.next().is_some() || m >= 60 || sec >= 60 || millis.len() != 3 {
        return None;
    }
    let ms = parse_digits(millis)?;
    Some(((h * 60 + m) * 60 + sec) * 1000 + ms)
}

fn parse_digits(s: &str) -> Option<i64> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn srt(text: &str) -> Result<ParseOutcome> {
        parse_chunks(text.as_bytes(), ChunkFormat::SrtLike)
    }

    #[test]
    fn two_entries() {
        let out = srt("1\n00:00:00,000 --> 00:00:02,000\nHello\n你好\n\n\
                       2\n00:00:02,200 --> 00:00:04,000\nworld.\n世界。\n")
        .unwrap();
        let chunks = &out.videos[0].chunks;
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].start_ms, 0);
        assert_eq!(chunks[1].start_ms, 2200);
        assert_eq!(chunks[1].end_ms, 4000);
        assert_eq!(chunks[0].src_text, "Hello");
        assert_eq!(chunks[0].tgt_text, "你好");
        assert!(out.skipped.is_empty());
    }

    #[test]
    fn unicode_arrow_accepted() {
        let out = srt("1\n00:00:00,000 → 00:00:02,000\nHi.\n嗨。\n").unwrap();
        assert_eq!(out.videos[0].chunks[0].end_ms, 2000);
    }

    #[test]
    fn end_before_start_names_entry() {
        let err = srt("7\n00:00:05,000 --> 00:00:04,000\nHi.\n嗨。\n").unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("entry 7"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_timestamp_reports_line() {
        let err = srt("1\n00:00:00,000 --> 00:00:02,000\na\nb\n\n2\n00:00:xx,000 --> 00:00:03,000\nc\nd\n")
            .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 7, .. }), "{err:?}");
    }

    #[test]
    fn monolingual_entry_is_skipped() {
        let out = srt("1\n00:00:00,000 --> 00:00:01,000\nOne.\n一。\n\n\
                       2\n00:00:01,000 --> 00:00:02,000\nTwo.\n\n\
                       3\n00:00:02,000 --> 00:00:03,000\nThree.\n三。\n")
        .unwrap();
        assert_eq!(out.chunk_count(), 2);
        assert_eq!(out.skipped.len(), 1);
        assert_eq!(out.skipped[0].line, 6);
        let idx: Vec<_> = out.videos[0].chunks.iter().map(|c| c.index).collect();
        assert_eq!(idx, [0, 1]);
    }

    #[test]
    fn tsv_groups_by_video() {
        let text = "start_ms\tend_ms\tsrc\ttgt\tvideo_id\n\
                    0\t1000\tA.\t甲。\tv1\n\
                    0\t900\tB.\t乙。\tv2\n\
                    1200\t2000\tC.\t丙。\tv1\n\
                    2000\t2500\t\t丁。\tv1\n";
        let out = parse_chunks(text.as_bytes(), ChunkFormat::Tsv).unwrap();
        assert_eq!(out.videos.len(), 2);
        assert_eq!(out.videos[0].video_id.as_deref(), Some("v1"));
        assert_eq!(out.videos[0].chunks.len(), 2);
        assert_eq!(out.videos[0].chunks[1].index, 1);
        assert_eq!(out.skipped.len(), 1);
    }

    #[test]
    fn tsv_bad_column_count() {
        let err = parse_chunks("0\t1\tx\n".as_bytes(), ChunkFormat::Tsv).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn timestamps() {
        assert_eq!(parse_timestamp("01:02:03,004"), Some(3_723_004));
        assert_eq!(parse_timestamp("00:00:01.500"), Some(1500));
        assert_eq!(parse_timestamp("00:61:00,000"), None);
        assert_eq!(parse_timestamp("00:00:00,00"), None);
    }
}
