//! Single-file checkpoints: magic, JSON header, then named tensors.
//!
//! Layout: `VMTCKPT1`, header length (u64 LE), header JSON, tensor count
//! (u32 LE), then per tensor: name length (u32), UTF-8 name, rank (u32),
//! dims (u64 each), values (f64 LE, row-major).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::data::{TextSpec, Vocab};
use super::network::VmtModel;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"VMTCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    src_vocab: Vocab,
    tgt_vocab: Vocab,
    text: TextSpec,
}

/// A model together with everything needed to translate raw text.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: VmtModel,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
    pub text: TextSpec,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn read_exact<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|e| bad(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(r, 4)?.try_into().expect("4 bytes")))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact(r, 8)?.try_into().expect("8 bytes")))
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let header = Header {
            config: self.model.config.clone(),
            src_vocab: self.src_vocab.clone(),
            tgt_vocab: self.tgt_vocab.clone(),
            text: self.text,
        };
        let json = serde_json::to_vec(&header)?;
        out.write_all(MAGIC)?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        let params = &self.model.params;
        out.write_all(&(params.len() as u32).to_le_bytes())?;
        for (name, value) in params.names().iter().zip(params.values()) {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&2u32.to_le_bytes())?;
            for d in value.shape() {
                out.write_all(&(*d as u64).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(value.len() * 8);
            for v in value.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        if read_exact(&mut input, 8)? != MAGIC {
            return Err(bad("missing VMTCKPT1 magic"));
        }
        let len = read_u64(&mut input)? as usize;
        let header: Header = serde_json::from_slice(&read_exact(&mut input, len)?)?;
        let count = read_u32(&mut input)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let n = read_u32(&mut input)? as usize;
            let name = String::from_utf8(read_exact(&mut input, n)?).map_err(|_| bad("tensor name is not UTF-8"))?;
            let rank = read_u32(&mut input)?;
            if rank != 2 {
                return Err(bad(format!("tensor `{name}` has rank {rank}, expected 2")));
            }
            let rows = read_u64(&mut input)? as usize;
            let cols = read_u64(&mut input)? as usize;
            let bytes = read_exact(&mut input, rows * cols * 8)?;
            let values = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let m = Array2::from_shape_vec((rows, cols), values).map_err(|e| bad(e.to_string()))?;
            tensors.push((name, m));
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(bad("trailing bytes after the last tensor"));
        }
        if header.src_vocab.len() != header.config.src_vocab || header.tgt_vocab.len() != header.config.tgt_vocab {
            return Err(bad("vocabulary sizes disagree with the model configuration"));
        }
        Ok(Self {
            model: VmtModel::from_params(header.config, tensors)?,
            src_vocab: header.src_vocab,
            tgt_vocab: header.tgt_vocab,
            text: header.text,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(fs::read(path)?.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkpoint() -> Checkpoint {
        let toks: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let v = Vocab::build([toks.as_slice()]);
        let cfg = ModelConfig {
            d_model: 8,
            d_ffn: 8,
            heads: 2,
            enc_layers: 1,
            dec_layers: 1,
            d_feature: 2,
            ..ModelConfig::desk(v.len(), v.len())
        };
        Checkpoint {
            model: VmtModel::new(cfg).unwrap(),
            src_vocab: v.clone(),
            tgt_vocab: v,
            text: TextSpec::default(),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = checkpoint();
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let back = Checkpoint::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn corrupt_files_rejected() {
        let mut buf = Vec::new();
        checkpoint().write_to(&mut buf).unwrap();
        let mut wrong_magic = buf.clone();
        wrong_magic[0] = b'X';
        assert!(matches!(Checkpoint::read_from(wrong_magic.as_slice()), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::read_from(&buf[..buf.len() - 3]).is_err());
        let mut extra = buf;
        extra.push(0);
        assert!(Checkpoint::read_from(extra.as_slice()).is_err());
    }
}
