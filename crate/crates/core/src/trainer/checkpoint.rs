//! Binary checkpoint container.
//!
//! ```text
//! magic "ICADCKPT" | version u32 | header_len u64 | header JSON
//! | params f32[n] | adam_m f32[n] | adam_v f32[n] | sha256 of all preceding bytes
//! ```
//!
//! Integers and floats are little-endian.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::error::{IcadError, Result};
use crate::log_miner::Template;
use crate::model::IcadModel;
use crate::nn::Params;

use super::optim::Adam;
use super::TrainConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ICADCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

pub fn tensor_index(model: &IcadModel<f32>) -> Vec<TensorEntry> {
    let mut out = Vec::new();
    model.visit("", &mut |name, shape, _| {
        out.push(TensorEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
        })
    });
    out
}

/// Exact position of a ChaCha8 stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    step: u64,
    adam_t: u64,
    rng: RngState,
    inventory: Option<Vec<Template>>,
    tensors: Vec<TensorEntry>,
}

/// Everything needed to resume training bit-identically.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub step: u64,
    pub adam_t: u64,
    pub rng: RngState,
    /// Template inventory the log ids refer to.
    pub inventory: Option<Vec<Template>>,
    pub tensors: Vec<TensorEntry>,
    pub params: Vec<f32>,
    pub adam_m: Vec<f32>,
    pub adam_v: Vec<f32>,
}

impl Checkpoint {
    pub fn capture(
        model: &IcadModel<f32>,
        train_config: &TrainConfig,
        optimizer: &Adam,
        rng: RngState,
        step: u64,
        inventory: Option<Vec<Template>>,
    ) -> Self {
        Checkpoint {
            model_config: model.config.clone(),
            train_config: train_config.clone(),
            step,
            adam_t: optimizer.t,
            rng,
            inventory,
            tensors: tensor_index(model),
            params: model.flatten(),
            adam_m: optimizer.m.clone(),
            adam_v: optimizer.v.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            model: self.model_config.clone(),
            train: self.train_config.clone(),
            step: self.step,
            adam_t: self.adam_t,
            rng: self.rng.clone(),
            inventory: self.inventory.clone(),
            tensors: self.tensors.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let n = self.params.len();
        let mut out = Vec::with_capacity(8 + 4 + 8 + json.len() + 12 * n + 32);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for buf in [&self.params, &self.adam_m, &self.adam_v] {
            for v in buf.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| IcadError::Checkpoint(m.to_string());
        if bytes.len() < 8 + 4 + 8 + 32 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(IcadError::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch: file is corrupted"));
        }
        let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let rest = body
            .get(20..)
            .filter(|r| r.len() >= hlen)
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(&rest[..hlen]).map_err(|e| IcadError::Checkpoint(format!("bad header: {e}")))?;
        let data = &rest[hlen..];
        let n: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        if data.len() != 12 * n {
            return Err(IcadError::Checkpoint(format!(
                "payload holds {} bytes, tensor index needs {}",
                data.len(),
                12 * n
            )));
        }
        let floats: Vec<f32> = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Checkpoint {
            model_config: header.model,
            train_config: header.train,
            step: header.step,
            adam_t: header.adam_t,
            rng: header.rng,
            inventory: header.inventory,
            tensors: header.tensors,
            params: floats[..n].to_vec(),
            adam_m: floats[n..2 * n].to_vec(),
            adam_v: floats[2 * n..].to_vec(),
        })
    }

    /// Rebuild the model described by the checkpoint's own config.
    pub fn model(&self) -> Result<IcadModel<f32>> {
        let mut model = IcadModel::new(self.model_config.clone(), 0)?;
        self.apply_to(&mut model)?;
        Ok(model)
    }

    /// Copy parameters into `model`. Every tensor name and shape is checked
    /// before anything is written.
    pub fn apply_to(&self, model: &mut IcadModel<f32>) -> Result<()> {
        let want = tensor_index(model);
        if want.len() != self.tensors.len() {
            return Err(IcadError::Shape(format!(
                "model has {} tensors, checkpoint has {}",
                want.len(),
                self.tensors.len()
            )));
        }
        for (w, h) in want.iter().zip(&self.tensors) {
            if w != h {
                return Err(IcadError::Shape(format!(
                    "tensor {} {:?} does not match checkpoint tensor {} {:?}",
                    w.name, w.shape, h.name, h.shape
                )));
            }
        }
        model.assign_flat(&self.params);
        Ok(())
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| IcadError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| IcadError::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
