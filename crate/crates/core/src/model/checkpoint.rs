//! Little-endian binary checkpoint:
//!
//! ```text
//! "SDGL"                     magic
//! u32                        format version
//! u32 + UTF-8 TOML           config and training state
//! u32                        tensor count
//! per tensor:
//!   u32 + UTF-8 name
//!   u32 rank, rank × u64 dims
//!   numel × f64 payload
//! ```
//!
//! Tensors: every parameter under its own name, `node_embeddings.dynamic`,
//! `scaler.mean` / `scaler.std` once fitted, and `adam.m.*` / `adam.v.*`
//! while training with Adam.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Scaler;
use crate::error::{Error, Result};
use crate::numerics::{RngAlgorithm, RngSnapshot, RngState, Tensor};

use super::{AdamState, ModelConfig, Sdgl};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SDGL";
pub const CHECKPOINT_VERSION: u32 = 1;

const DYNAMIC: &str = "node_embeddings.dynamic";
const SCALER_MEAN: &str = "scaler.mean";
const SCALER_STD: &str = "scaler.std";

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    state: StateText,
}

/// 64- and 128-bit counters as decimal strings; TOML integers are signed
/// 64-bit.
#[derive(Serialize, Deserialize)]
struct StateText {
    step: String,
    rng_algorithm: RngAlgorithm,
    rng_seed: String,
    rng_stream: String,
    rng_word_pos: String,
}

fn parse_num<T: std::str::FromStr>(field: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Checkpoint(format!("state field `{field}` is not a number: {s:?}")))
}

impl Sdgl {
    pub fn to_checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let snap = self.rng.snapshot();
        let word_pos = (u128::from(snap.word_pos_hi) << 64) | u128::from(snap.word_pos_lo);
        let header = Header {
            config: self.config.clone(),
            state: StateText {
                step: self.step.to_string(),
                rng_algorithm: snap.algorithm,
                rng_seed: snap.seed.to_string(),
                rng_stream: snap.stream.to_string(),
                rng_word_pos: word_pos.to_string(),
            },
        };
        let text = toml::to_string(&header)
            .map_err(|e| Error::Checkpoint(format!("encode header: {e}")))?;

        let mut records: Vec<(String, &Tensor)> =
            self.params.iter().map(|(n, t)| (n.to_owned(), t)).collect();
        records.push((DYNAMIC.to_owned(), self.embeddings.dynamic()));
        let scaler = self.scaler.as_ref().map(|s| {
            let n = s.nodes();
            (
                Tensor::new(&[n], s.mean.clone()).expect("scaler length"),
                Tensor::new(&[n], s.std.clone()).expect("scaler length"),
            )
        });
        if let Some((m, s)) = &scaler {
            records.push((SCALER_MEAN.to_owned(), m));
            records.push((SCALER_STD.to_owned(), s));
        }
        if let Some(adam) = &self.adam {
            for (k, (name, _)) in self.params.iter().enumerate() {
                records.push((format!("adam.m.{name}"), &adam.m[k]));
                records.push((format!("adam.v.{name}"), &adam.v[k]));
            }
        }

        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_str(&mut out, &text)?;
        put_u32(&mut out, records.len())?;
        for (name, t) in records {
            put_str(&mut out, &name)?;
            put_u32(&mut out, t.rank())?;
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version}, this build reads {CHECKPOINT_VERSION}"
            )));
        }
        let text = r.string()?;
        let header: Header =
            toml::from_str(&text).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let dims = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = dims.iter().product();
            let data = (0..numel).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            if tensors
                .insert(name.clone(), Tensor::new(&dims, data)?)
                .is_some()
            {
                return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }

        let mut model = Sdgl::new(header.config)?;
        let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_owned()).collect();
        for name in &names {
            model.params.set(name, take(&mut tensors, name)?)?;
        }
        model.embeddings.set_dynamic(take(&mut tensors, DYNAMIC)?)?;
        if let (Ok(mean), Ok(std)) = (
            take(&mut tensors, SCALER_MEAN),
            take(&mut tensors, SCALER_STD),
        ) {
            if mean.numel() != model.config.nodes || std.numel() != model.config.nodes {
                return Err(Error::Checkpoint(
                    "scaler size differs from node count".into(),
                ));
            }
            model.scaler = Some(Scaler {
                mean: mean.into_data(),
                std: std.into_data(),
            });
        }
        if names
            .first()
            .is_some_and(|n| tensors.contains_key(&format!("adam.m.{n}")))
        {
            let mut m = Vec::with_capacity(names.len());
            let mut v = Vec::with_capacity(names.len());
            for (k, name) in names.iter().enumerate() {
                let shape = model.params.tensors()[k].shape().to_vec();
                for (dst, key) in [
                    (&mut m, format!("adam.m.{name}")),
                    (&mut v, format!("adam.v.{name}")),
                ] {
                    let t = take(&mut tensors, &key)?;
                    if t.shape() != shape.as_slice() {
                        return Err(Error::Checkpoint(format!(
                            "{key} has shape {:?}",
                            t.shape()
                        )));
                    }
                    dst.push(t);
                }
            }
            model.adam = Some(AdamState { m, v });
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }

        let s = &header.state;
        model.step = parse_num("step", &s.step)?;
        let word_pos: u128 = parse_num("rng_word_pos", &s.rng_word_pos)?;
        model.rng = RngState::restore(&RngSnapshot {
            algorithm: s.rng_algorithm,
            seed: parse_num("rng_seed", &s.rng_seed)?,
            stream: parse_num("rng_stream", &s.rng_stream)?,
            word_pos_hi: (word_pos >> 64) as u64,
            word_pos_lo: word_pos as u64,
        });
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }
}

fn take(tensors: &mut BTreeMap<String, Tensor>, name: &str) -> Result<Tensor> {
    tensors
        .remove(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|e| Error::Checkpoint(format!("invalid UTF-8: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let model = Sdgl::new(ModelConfig::with_nodes(3)).unwrap();
        let bytes = model.to_checkpoint_bytes().unwrap();
        assert_eq!(&bytes[..4], b"SDGL");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Sdgl::from_checkpoint_bytes(&bad).is_err());
        assert!(Sdgl::from_checkpoint_bytes(&bytes[..bytes.len() - 3]).is_err());
        let back = Sdgl::from_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(back.params, model.params);
        assert_eq!(back.to_checkpoint_bytes().unwrap(), bytes);
    }
}
