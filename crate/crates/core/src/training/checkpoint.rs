//! Binary training-state container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header, then every tensor's `f32` values little-endian in header order.

use std::io::Write;
use std::path::Path;

use rccm_autograd::Tensor;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{Network, ParamStore};

pub const MAGIC: &[u8; 8] = b"RCCMCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub params: ParamStore<f32>,
    pub optimizer: Adam<f32>,
}

/// Shuffling uses one ChaCha stream per epoch, so the seed and the next
/// epoch index are the whole generator state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct RngState {
    seed: u64,
    next_stream: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    epoch: usize,
    optimizer_step: u64,
    rng: RngState,
    tensors: Vec<Entry>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Every tensor of the state in file order.
fn tensors(params: &ParamStore<f32>, adam: &Adam<f32>) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    let mut out = Vec::new();
    for p in params.params() {
        out.push((format!("param/{}", p.name), p.value.shape().to_vec(), p.value.data().to_vec()));
    }
    for r in params.norms() {
        out.push((format!("norm/{}/mean", r.name), vec![r.mean.len()], r.mean.clone()));
        out.push((format!("norm/{}/var", r.name), vec![r.var.len()], r.var.clone()));
    }
    for (kind, moments) in [("adam_m", &adam.m), ("adam_v", &adam.v)] {
        for (p, t) in params.params().iter().zip(moments) {
            out.push((format!("{kind}/{}", p.name), t.shape().to_vec(), t.data().to_vec()));
        }
    }
    out
}

impl Checkpoint {
    pub fn network(&self) -> Result<Network> {
        Ok(Network::new::<f32>(&self.config.model)?.0)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let items = tensors(&self.params, &self.optimizer);
        let header = Header {
            config: self.config.clone(),
            epoch: self.epoch,
            optimizer_step: self.optimizer.step,
            rng: RngState {
                seed: self.config.seed,
                next_stream: self.epoch as u64,
            },
            tensors: items
                .iter()
                .map(|(name, shape, _)| Entry {
                    name: name.clone(),
                    shape: shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Serde(e.to_string()))?;
        let n: usize = items.iter().map(|t| t.2.len()).sum();
        let mut out = Vec::with_capacity(20 + json.len() + 4 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, data) in &items {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(format!(
                "unsupported checkpoint format version {version} (this build reads {FORMAT_VERSION})"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&body[..hlen]).map_err(|e| bad(format!("malformed header: {e}")))?;
        header.config.validate()?;
        let mut data = &body[hlen..];

        let (_, mut params) = Network::new::<f32>(&header.config.model)?;
        let mut optimizer = Adam::new(header.config.optimizer, params.params());
        optimizer.step = header.optimizer_step;
        let expected = tensors(&params, &optimizer);
        if expected.len() != header.tensors.len() {
            return Err(bad(format!(
                "checkpoint holds {} tensors, model config needs {}",
                header.tensors.len(),
                expected.len()
            )));
        }
        let mut values = Vec::with_capacity(expected.len());
        for ((name, shape, _), entry) in expected.iter().zip(&header.tensors) {
            if &entry.name != name || &entry.shape != shape {
                return Err(bad(format!(
                    "tensor {} {:?} does not match model tensor {name} {shape:?}",
                    entry.name, entry.shape
                )));
            }
            let n: usize = shape.iter().product();
            if data.len() < 4 * n {
                return Err(bad(format!("truncated data for {name}")));
            }
            let (chunk, rest) = data.split_at(4 * n);
            values.push(
                chunk
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                    .collect::<Vec<f32>>(),
            );
            data = rest;
        }
        if !data.is_empty() {
            return Err(bad(format!("{} trailing bytes", data.len())));
        }

        let mut it = values.into_iter();
        for p in params.params_mut() {
            p.value = Tensor::new(p.value.shape(), it.next().expect("counted"))?;
        }
        for r in params.norms_mut() {
            r.mean = it.next().expect("counted");
            r.var = it.next().expect("counted");
        }
        for moments in [&mut optimizer.m, &mut optimizer.v] {
            for t in moments.iter_mut() {
                *t = Tensor::new(t.shape(), it.next().expect("counted"))?;
            }
        }
        Ok(Self {
            config: header.config,
            epoch: header.epoch,
            params,
            optimizer,
        })
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
