//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "SGCKPT01"
//! hlen     u64      length of the JSON header in bytes
//! header   hlen     UTF-8 JSON (configs, classes, iteration, tensor index,
//!                   optimizer hyper-parameters)
//! data     f64 LE   every tensor in index order; then, when an optimizer is
//!                   present, the first and second moments of every
//!                   trainable tensor in index order
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a save/load round trip is exact.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::losses::LossConfig;
use crate::model::{ModelConfig, SmplGait};
use crate::nn::{ParamStore, TensorKind};
use crate::optim::Adam;
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 8] = b"SGCKPT01";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    /// Subject id of every classifier label.
    pub classes: Vec<u32>,
    pub iteration: u64,
    pub store: ParamStore,
    pub optimizer: Option<Adam>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    kind: TensorKind,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    loss: LossConfig,
    train: TrainConfig,
    classes: Vec<u32>,
    iteration: u64,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptimizerHeader>,
}

fn corrupt(msg: impl Into<String>) -> GaitError {
    GaitError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            model: self.model.clone(),
            loss: self.loss.clone(),
            train: self.train.clone(),
            classes: self.classes.clone(),
            iteration: self.iteration,
            tensors: self
                .store
                .iter()
                .map(|(_, t)| TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    kind: t.kind,
                })
                .collect(),
            optimizer: self.optimizer.as_ref().map(|a| OptimizerHeader {
                beta1: a.beta1,
                beta2: a.beta2,
                eps: a.eps,
                weight_decay: a.weight_decay,
                step: a.step,
            }),
        };
        let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.store.num_trainable() * 3);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |vals: &[f64]| vals.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        for (_, t) in self.store.iter() {
            put(&t.data);
        }
        if let Some(a) = &self.optimizer {
            for (m, v) in a.m.iter().zip(&a.v) {
                put(m);
                put(v);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint file (bad magic)"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes
            .get(16..16usize.saturating_add(hlen))
            .ok_or_else(|| corrupt("truncated header"))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| corrupt(format!("bad header: {e}")))?;
        let mut data = &bytes[16 + hlen..];
        let mut take = |n: usize| -> Result<Vec<f64>> {
            if data.len() < n * 8 {
                return Err(corrupt("truncated tensor data"));
            }
            let (head, rest) = data.split_at(n * 8);
            data = rest;
            Ok(head
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let mut store = ParamStore::new();
        for t in &header.tensors {
            let n = t.shape.iter().product();
            store.register(t.name.clone(), t.shape.clone(), t.kind, take(n)?);
        }
        let optimizer = match header.optimizer {
            Some(h) => {
                let mut m = Vec::with_capacity(store.len());
                let mut v = Vec::with_capacity(store.len());
                for (_, t) in store.iter() {
                    let n = if t.kind.trainable() { t.data.len() } else { 0 };
                    m.push(take(n)?);
                    v.push(take(n)?);
                }
                Some(Adam {
                    beta1: h.beta1,
                    beta2: h.beta2,
                    eps: h.eps,
                    weight_decay: h.weight_decay,
                    step: h.step,
                    m,
                    v,
                })
            }
            None => None,
        };
        if !data.is_empty() {
            return Err(corrupt(format!("{} trailing bytes", data.len())));
        }
        Ok(Self {
            model: header.model,
            loss: header.loss,
            train: header.train,
            classes: header.classes,
            iteration: header.iteration,
            store,
            optimizer,
        })
    }

    /// Writes through a temporary file and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| GaitError::io(dir, e))?;
        }
        let tmp = path.with_extension("ckpt.tmp");
        let file = fs::File::create(&tmp).map_err(|e| GaitError::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&self.to_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| GaitError::io(&tmp, e))?;
        drop(w);
        fs::rename(&tmp, path).map_err(|e| GaitError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| GaitError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            GaitError::Checkpoint(msg) => GaitError::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// The embedding network (no classifier head) with the saved weights.
    pub fn build_model(&self) -> Result<(SmplGait, ParamStore)> {
        let mut store = ParamStore::new();
        let model = SmplGait::new(&self.model, &mut store, 0)?;
        store.copy_from(&self.store)?;
        Ok((model, store))
    }
}
