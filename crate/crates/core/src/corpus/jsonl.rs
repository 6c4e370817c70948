use std::collections::HashSet;
use std::io::{BufRead, Write};

use super::CorpusRecord;
use crate::{Error, Result};

/// Writes one JSON object per line, LF-terminated.
pub fn write_corpus<W: Write>(mut out: W, records: &[CorpusRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a corpus written by [`write_corpus`]. Blank lines are ignored;
/// duplicate ids and schema violations are reported with their line number.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<CorpusRecord>> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: no + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::Schema {
                line: no + 1,
                message: format!("duplicate id `{}`", record.id),
            });
        }
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn arb_record() -> impl Strategy<Value = CorpusRecord> {
        (
            "[a-z0-9]{1,8}",
            0i64..1_000_000,
            0i64..20_000,
            "\\PC{0,20}",
            "\\PC{0,20}",
            proptest::option::of(proptest::collection::btree_map("[a-z_]{1,6}", -1e6f64..1e6, 0..4)),
            proptest::option::of("[a-z]{1,8}"),
            0usize..4,
        )
            .prop_map(|(vid, start, len, src, tgt, scores, category, split)| CorpusRecord {
                id: String::new(),
                video_id: vid,
                clip_start_ms: start,
                clip_end_ms: start + len,
                src,
                tgt,
                scores,
                category,
                split: [Split::Train, Split::Valid, Split::TestAmbiguous, Split::TestUnambiguous][split],
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip(mut records in proptest::collection::vec(arb_record(), 0..100)) {
            for (i, r) in records.iter_mut().enumerate() {
                r.id = format!("{}#{i:06}", r.video_id);
            }
            let mut buf = Vec::new();
            write_corpus(&mut buf, &records).unwrap();
            let back = read_corpus(buf.as_slice()).unwrap();
            prop_assert_eq!(back, records);
        }
    }

    #[test]
    fn missing_src_reports_line() {
        let good = r#"{"id":"a","video_id":"v","clip_start_ms":0,"clip_end_ms":1,"src":"x","tgt":"y","split":"train"}"#;
        let bad = r#"{"id":"b","video_id":"v","clip_start_ms":0,"clip_end_ms":1,"tgt":"y","split":"train"}"#;
        let text = format!("{good}\n{bad}\n");
        let err = read_corpus(text.as_bytes()).unwrap_err();
        match err {
            Error::Schema { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("src"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file() {
        assert!(read_corpus("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn duplicate_id_rejected() {
        let line = r#"{"id":"a","video_id":"v","clip_start_ms":0,"clip_end_ms":1,"src":"x","tgt":"y","split":"valid"}"#;
        let text = format!("{line}\n{line}\n");
        assert!(matches!(read_corpus(text.as_bytes()), Err(Error::Schema { line: 2, .. })));
    }

    #[test]
    fn optional_fields_omitted() {
        let r = CorpusRecord {
            id: "v#000000".into(),
            video_id: "v".into(),
            clip_start_ms: 0,
            clip_end_ms: 10,
            src: "a".into(),
            tgt: "b".into(),
            scores: Some(BTreeMap::from([("comet".to_string(), 0.5)])),
            category: None,
            split: Split::TestAmbiguous,
        };
        let mut buf = Vec::new();
        write_corpus(&mut buf, std::slice::from_ref(&r)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "{\"id\":\"v#000000\",\"video_id\":\"v\",\"clip_start_ms\":0,\"clip_end_ms\":10,\
             \"src\":\"a\",\"tgt\":\"b\",\"scores\":{\"comet\":0.5},\"split\":\"test-ambiguous\"}\n"
        );
    }
}
