//! Binary checkpoint container (all integers little-endian):
//!
//! ```text
//! magic           8 bytes  "SSDIFFCK"
//! version         u32      = 1
//! d_model         u32
//! n_layers        u32
//! heads           u32
//! max_len         u32
//! vocab_size      u32
//! dropout_ppm     u32      dropout rate × 1e6, rounded
//! step            u64
//! metrics_len     u32      then metrics_len bytes of UTF-8 JSON (MetricReport)
//! n_tensors       u32
//! per tensor:
//!   name_len      u32, then name_len bytes of UTF-8 name
//!   rank          u32, then rank × u32 dims
//!   data          product(dims) × f32
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::denoiser::{DenoiserParams, ModelConfig};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::numeric::Tensor;

pub const MAGIC: &[u8; 8] = b"SSDIFFCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: DenoiserParams,
    pub step: u64,
    pub val_metrics: MetricReport,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let c = &self.params.config;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        for v in [c.d_model, c.n_layers, c.heads, c.max_len, c.vocab_size] {
            put_u32(&mut out, to_u32(v, "config value")?);
        }
        put_u32(&mut out, (c.dropout as f64 * 1e6).round() as u32);
        out.extend_from_slice(&self.step.to_le_bytes());
        let metrics = serde_json::to_vec(&self.val_metrics)?;
        put_u32(&mut out, to_u32(metrics.len(), "metrics length")?);
        out.extend_from_slice(&metrics);
        let tensors = self.params.named_tensors();
        put_u32(&mut out, to_u32(tensors.len(), "tensor count")?);
        for (name, t) in tensors {
            put_u32(&mut out, to_u32(name.len(), "name length")?);
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, to_u32(t.shape().len(), "rank")?);
            for &d in t.shape() {
                put_u32(&mut out, to_u32(d, "dimension")?);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic: not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (this build reads version {VERSION})"
            )));
        }
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let config = ModelConfig {
            d_model: dims[0],
            n_layers: dims[1],
            heads: dims[2],
            max_len: dims[3],
            vocab_size: dims[4],
            dropout: (r.u32()? as f64 / 1e6) as f32,
        };
        config
            .validate()
            .map_err(|e| Error::Checkpoint(format!("invalid model config: {e}")))?;
        let step = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let mlen = r.u32()? as usize;
        let val_metrics: MetricReport = serde_json::from_slice(r.take(mlen)?)
            .map_err(|e| Error::Checkpoint(format!("bad metrics block: {e}")))?;

        let count = r.u32()? as usize;
        let mut found: HashMap<String, Tensor> = HashMap::new();
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name} is too large")))?;
            let raw = r.take(numel.checked_mul(4).ok_or_else(|| Error::Checkpoint("overflow".into()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
            found.insert(name, t);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - r.pos
            )));
        }

        let mut params = DenoiserParams::init(&config, 0)?;
        let names: Vec<(String, Vec<usize>)> = params
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if names.len() != found.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, file has {}",
                names.len(),
                found.len()
            )));
        }
        for (slot, (name, shape)) in params.tensors_mut().into_iter().zip(names) {
            let t = found
                .remove(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            *slot = t;
        }
        if !params.is_finite() {
            return Err(Error::Checkpoint("non-finite weights".into()));
        }
        Ok(Checkpoint {
            params,
            step,
            val_metrics,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} {v} does not fit in u32")))
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated file: needed {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
