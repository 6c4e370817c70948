use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use vmtlab_core::corpus::read_corpus;
use vmtlab_core::metrics::{is_cjk, read_annotations, TermAnnotation, Tokenizer};
use vmtlab_core::model::{read_feature_file, read_manifest, FeatureSequence};
use vmtlab_core::CorpusRecord;

pub fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

pub fn load_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    read_corpus(open(path)?).with_context(|| format!("reading corpus {}", path.display()))
}

pub fn load_annotations(path: &Path) -> Result<Vec<TermAnnotation>> {
    read_annotations(open(path)?).with_context(|| format!("reading annotations {}", path.display()))
}

/// Writes `bytes` to `path`, or to standard output.
pub fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(p, bytes).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

pub fn pretty<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

pub fn jsonl<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Loads the features of the listed record ids. Manifest paths are
/// relative to the manifest's directory.
pub fn load_features<'a>(manifest: &Path, ids: impl IntoIterator<Item = &'a str>) -> Result<HashMap<String, FeatureSequence>> {
    let wanted: HashSet<&str> = ids.into_iter().collect();
    let entries = read_manifest(open(manifest)?).with_context(|| format!("reading manifest {}", manifest.display()))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut out = HashMap::new();
    for e in entries.into_iter().filter(|e| wanted.contains(e.id.as_str())) {
        let path: PathBuf = base.join(&e.path);
        let seq = read_feature_file(&path, &e.id).with_context(|| format!("features of `{}`", e.id))?;
        out.insert(e.id, seq);
    }
    Ok(out)
}

/// Joins model tokens back into text: CJK characters are concatenated,
/// other neighbours are separated by a space.
pub fn detokenize(tokens: &[String], tokenizer: Tokenizer) -> String {
    match tokenizer {
        Tokenizer::Whitespace => tokens.join(" "),
        Tokenizer::Zh => {
            let mut s = String::new();
            let mut prev_cjk = true;
            for t in tokens {
                let cjk = t.chars().all(is_cjk);
                if !s.is_empty() && !(cjk && prev_cjk) {
                    s.push(' ');
                }
                s.push_str(t);
                prev_cjk = cjk;
            }
            s
        }
    }
}
