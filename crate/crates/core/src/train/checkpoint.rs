//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! b"XATN"  u32 version
//! u64 len, JSON header {"model": ModelConfig, "meta": any}
//! u64 step
//! u32 n_tensors, then per tensor:
//!     u32 name_len, name bytes, u32 ndim, u64 dims.., f32 payload
//! u8 has_optimizer, then if 1:
//!     u64 adam_step, per tensor: f32 m.., f32 v..
//! ```

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::trainer::TrainState;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::numerics::{AdamState, Tensor};

pub const MAGIC: [u8; 4] = *b"XATN";
pub const VERSION: u32 = 1;

/// A saved model, optionally with optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub step: u64,
    pub adam: Option<AdamState>,
    /// Free-form provenance (world and training settings).
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    meta: serde_json::Value,
}

impl Checkpoint {
    pub fn from_state(state: &TrainState, with_optimizer: bool, meta: serde_json::Value) -> Self {
        Checkpoint {
            params: state.params.clone(),
            step: state.step,
            adam: with_optimizer.then(|| state.adam.clone()),
            meta,
        }
    }

    /// Training state to resume from; fresh moments if none were saved.
    pub fn into_state(self) -> TrainState {
        let step = self.step;
        match self.adam {
            Some(adam) => TrainState {
                params: self.params,
                adam,
                step,
            },
            None => TrainState {
                step,
                ..TrainState::fresh(self.params)
            },
        }
    }

    /// Errors unless the stored model config equals `expected`.
    pub fn expect_config(&self, expected: &ModelConfig) -> Result<()> {
        if &self.params.config != expected {
            return Err(Error::Config(format!(
                "checkpoint config mismatch: found {}, expected {}",
                serde_json::to_string(&self.params.config)?,
                serde_json::to_string(expected)?
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut b = Vec::new();
        b.extend(MAGIC);
        b.extend(VERSION.to_le_bytes());
        let header = serde_json::to_vec(&Header {
            model: self.params.config.clone(),
            meta: self.meta.clone(),
        })?;
        b.extend((header.len() as u64).to_le_bytes());
        b.extend(header);
        b.extend(self.step.to_le_bytes());
        let named = self.params.named();
        b.extend((named.len() as u32).to_le_bytes());
        for (name, t) in &named {
            b.extend((name.len() as u32).to_le_bytes());
            b.extend(name.as_bytes());
            b.extend((t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                b.extend((d as u64).to_le_bytes());
            }
            put_f32s(&mut b, t.data());
        }
        match &self.adam {
            None => b.push(0),
            Some(a) => {
                if a.m.len() != named.len() || a.v.len() != named.len() {
                    return Err(Error::Format("optimizer state does not match the parameter list".into()));
                }
                b.push(1);
                b.extend(a.step.to_le_bytes());
                for (m, v) in a.m.iter().zip(&a.v) {
                    put_f32s(&mut b, m);
                    put_f32s(&mut b, v);
                }
            }
        }
        Ok(b)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Format(format!(
                "bad checkpoint magic: found {:?}, expected {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&MAGIC)
            )));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version: found {version}, expected {VERSION}"
            )));
        }
        let hlen = r.u64()? as usize;
        let header: Header = serde_json::from_slice(r.take(hlen)?)
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        header.model.validate()?;
        let step = r.u64()?;
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let numel = numel.ok_or_else(|| Error::Format(format!("tensor `{name}` shape overflows")))?;
            let data = r.f32s(numel)?;
            tensors.push((name, Tensor::new(shape, data)?));
        }
        let params = ModelParams::from_named(header.model, tensors)?;
        let adam = match r.take(1)?[0] {
            0 => None,
            1 => {
                let astep = r.u64()?;
                let mut m = Vec::new();
                let mut v = Vec::new();
                for (_, t) in params.named() {
                    m.push(r.f32s(t.numel())?);
                    v.push(r.f32s(t.numel())?);
                }
                Some(AdamState { step: astep, m, v })
            }
            f => return Err(Error::Format(format!("bad optimizer flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            params,
            step,
            adam,
            meta: header.meta,
        })
    }

    /// Writes via a temporary file and rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_f32s(b: &mut Vec<u8>, xs: &[f32]) {
    for x in xs {
        b.extend(x.to_le_bytes());
    }
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format(format!(
                "truncated checkpoint: needed {n} bytes at offset {}, {} available",
                self.pos,
                self.bytes.len() - self.pos
            ))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn tiny() -> ModelConfig {
        ModelConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 8,
            d_head: 4,
            d_ff: 16,
            max_seq_len: 16,
            vocab_size: 20,
            seed: 1,
        }
    }

    fn sample(with_opt: bool) -> Checkpoint {
        let mut state = TrainState::fresh(init_params(&tiny()).unwrap());
        state.step = 17;
        state.adam.step = 17;
        for (i, m) in state.adam.m.iter_mut().enumerate() {
            m.iter_mut().for_each(|x| *x = i as f32 * 0.5 - 1.0);
        }
        Checkpoint::from_state(&state, with_opt, serde_json::json!({"note": "x"}))
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for opt in [false, true] {
            let c = sample(opt);
            let bytes = c.to_bytes().unwrap();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }

    #[test]
    fn header_layout() {
        let bytes = sample(false).to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"XATN");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), VERSION);
    }

    #[test]
    fn corrupted_inputs_are_named() {
        let bytes = sample(true).to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'Y';
        assert!(Checkpoint::from_bytes(&bad).unwrap_err().to_string().contains("magic"));
        let mut bad = bytes.clone();
        bad[4] = 9;
        let msg = Checkpoint::from_bytes(&bad).unwrap_err().to_string();
        assert!(msg.contains("found 9") && msg.contains("expected 1"), "{msg}");
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            let msg = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err().to_string();
            assert!(msg.contains("truncated"), "{cut}: {msg}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }

    #[test]
    fn config_mismatch_detected() {
        let c = sample(false);
        assert!(c.expect_config(&tiny()).is_ok());
        let other = ModelConfig { d_ff: 32, ..tiny() };
        assert!(c.expect_config(&other).unwrap_err().to_string().contains("mismatch"));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.xatn");
        let c = sample(true);
        c.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), c);
        assert!(Checkpoint::load(&dir.path().join("missing")).is_err());
    }
}
