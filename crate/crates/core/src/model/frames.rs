//! Clip feature sequences, frame sampling and the on-disk feature format.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub video_id: String,
    /// `frames x dim`.
    pub data: Array2<f64>,
}

impl FeatureSequence {
    pub fn new(video_id: impl Into<String>, data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::invalid("feature sequence needs at least one frame"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature sequence contains NaN or Inf"));
        }
        Ok(Self {
            video_id: video_id.into(),
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// Keeps the frames chosen by [`sample_frames`].
    pub fn sampled(&self, k: usize) -> Result<Self> {
        let idx = sample_frames(self.frames(), k)?;
        Ok(Self {
            video_id: self.video_id.clone(),
            data: self.data.select(ndarray::Axis(0), &idx),
        })
    }

    pub fn zeroed(&self) -> Self {
        Self {
            video_id: self.video_id.clone(),
            data: Array2::zeros(self.data.dim()),
        }
    }
}

/// Uniformly spaced frame indices: all frames when `t <= k`, otherwise
/// `floor((j + 0.5) * t / k)` for `j` in `0..k`.
pub fn sample_frames(t: usize, k: usize) -> Result<Vec<usize>> {
    if t == 0 {
        return Err(Error::invalid("cannot sample from zero frames"));
    }
    if k == 0 {
        return Err(Error::invalid("frame budget must be at least 1"));
    }
    if t <= k {
        return Ok((0..t).collect());
    }
    // (2j + 1) * t / (2k), in integers to avoid rounding at exact multiples.
    Ok((0..k).map(|j| (2 * j + 1) * t / (2 * k)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureMeta {
    pub frames: usize,
    pub dim: usize,
}

/// Writes `<stem>.f32` and `<stem>.meta.json` under `dir`; returns the
/// path of the `.f32` file.
pub fn write_feature_file(dir: &Path, stem: &str, seq: &FeatureSequence) -> Result<PathBuf> {
    let data_path = dir.join(format!("{stem}.f32"));
    let meta_path = dir.join(format!("{stem}.meta.json"));
    let meta = FeatureMeta {
        frames: seq.frames(),
        dim: seq.dim(),
    };
    fs::write(&meta_path, serde_json::to_vec(&meta)?)?;
    let mut bytes = Vec::with_capacity(seq.data.len() * 4);
    for v in seq.data.iter() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(&data_path, bytes)?;
    Ok(data_path)
}

/// Reads a `.f32` file and its sibling `.meta.json`.
pub fn read_feature_file(path: &Path, video_id: &str) -> Result<FeatureSequence> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::invalid(format!("bad feature path {}", path.display())))?;
    let stem = name.strip_suffix(".f32").unwrap_or(name);
    let meta_path = path.with_file_name(format!("{stem}.meta.json"));
    let meta: FeatureMeta = serde_json::from_slice(&fs::read(&meta_path)?)?;
    let bytes = fs::read(path)?;
    if bytes.len() != meta.frames * meta.dim * 4 {
        return Err(Error::Shape(format!(
            "{}: expected {}x{} floats, found {} bytes",
            path.display(),
            meta.frames,
            meta.dim,
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let data = Array2::from_shape_vec((meta.frames, meta.dim), values).map_err(|e| Error::Shape(e.to_string()))?;
    FeatureSequence::new(video_id, data).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
}

pub fn write_manifest<W: Write>(mut out: W, entries: &[ManifestEntry]) -> Result<()> {
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_manifest<R: BufRead>(reader: R) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
