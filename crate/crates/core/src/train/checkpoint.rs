//! Binary checkpoints: parameters, optimizer state, epoch counter, and rng
//! state behind a checksummed little-endian container.

use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::optimizer::AdamW;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{A4Net, ModelConfig};
use crate::tensor::Elem;

pub const MAGIC: &[u8; 8] = b"A4NETCK\0";
pub const FORMAT_VERSION: u32 = 1;

const DT_F32: u8 = 0;
const DT_F64: u8 = 1;
const DT_U64: u8 = 2;
const DT_U8: u8 = 3;

/// Element types that can live inside a checkpoint block.
pub trait BinaryElem: Elem {
    const DTYPE: u8;
    const SIZE: usize;
    fn push_le(self, out: &mut Vec<u8>);
    fn parse_le(bytes: &[u8]) -> Self;
}

impl BinaryElem for f32 {
    const DTYPE: u8 = DT_F32;
    const SIZE: usize = 4;
    fn push_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn parse_le(bytes: &[u8]) -> f32 {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl BinaryElem for f64 {
    const DTYPE: u8 = DT_F64;
    const SIZE: usize = 8;
    fn push_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn parse_le(bytes: &[u8]) -> f64 {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigSnapshot {
    model: ModelConfig,
    train: TrainConfig,
}

/// Full training state. `params` holds every named tensor in registration
/// order; the optimizer vectors are flat and aligned with the store layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<E: Elem> {
    pub model_cfg: ModelConfig,
    pub train_cfg: TrainConfig,
    pub params: Vec<(String, Vec<usize>, Vec<E>)>,
    pub opt_m: Vec<E>,
    pub opt_v: Vec<E>,
    pub opt_step: u64,
    pub epoch: u64,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
}

/// Everything needed to resume or evaluate, rebuilt from a checkpoint.
pub struct Restored<E: Elem> {
    pub model: A4Net<E>,
    pub optimizer: AdamW<E>,
    pub rng: ChaCha8Rng,
    pub epoch: u64,
}

impl<E: BinaryElem> Checkpoint<E> {
    pub fn capture(
        model: &A4Net<E>,
        train_cfg: &TrainConfig,
        optimizer: &AdamW<E>,
        epoch: u64,
        rng: &ChaCha8Rng,
    ) -> Checkpoint<E> {
        let params = model
            .store
            .entries()
            .iter()
            .map(|e| {
                let values = model.store.data()[e.offset..e.offset + e.len].to_vec();
                (e.name.clone(), e.shape.clone(), values)
            })
            .collect();
        Checkpoint {
            model_cfg: model.cfg.clone(),
            train_cfg: train_cfg.clone(),
            params,
            opt_m: optimizer.m.clone(),
            opt_v: optimizer.v.clone(),
            opt_step: optimizer.step,
            epoch,
            rng_seed: rng.get_seed(),
            rng_word_pos: rng.get_word_pos(),
        }
    }

    pub fn verify_compatible(&self, cfg: &ModelConfig) -> Result<()> {
        if self.model_cfg.emotion_classes != cfg.emotion_classes {
            return Err(Error::Config(format!(
                "checkpoint was trained with emotion_classes = {}, model has {}",
                self.model_cfg.emotion_classes, cfg.emotion_classes
            )));
        }
        if &self.model_cfg != cfg {
            return Err(Error::Config(
                "checkpoint model configuration does not match".into(),
            ));
        }
        Ok(())
    }

    /// Rebuild the model and resume state from the snapshot.
    pub fn restore(&self) -> Result<Restored<E>> {
        let mut model = A4Net::new(self.model_cfg.clone(), self.train_cfg.seed)?;
        if self.params.len() != model.store.count() {
            return Err(Error::Config(format!(
                "checkpoint holds {} tensors, model has {}",
                self.params.len(),
                model.store.count()
            )));
        }
        for (name, shape, values) in &self.params {
            let id = model.store.id(name).ok_or_else(|| {
                Error::Config(format!("checkpoint tensor {name} is not a model parameter"))
            })?;
            if &model.store.entry(id).shape != shape {
                return Err(Error::Config(format!(
                    "checkpoint tensor {name} has shape {shape:?}, model expects {:?}",
                    model.store.entry(id).shape
                )));
            }
            model.store.set(id, values)?;
        }
        let flat = model.store.len_flat();
        if self.opt_m.len() != flat || self.opt_v.len() != flat {
            return Err(Error::Config(format!(
                "optimizer state length {} does not match {flat} parameters",
                self.opt_m.len()
            )));
        }
        let optimizer = AdamW {
            m: self.opt_m.clone(),
            v: self.opt_v.clone(),
            step: self.opt_step,
        };
        let mut rng = ChaCha8Rng::from_seed(self.rng_seed);
        rng.set_word_pos(self.rng_word_pos);
        Ok(Restored {
            model,
            optimizer,
            rng,
            epoch: self.epoch,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let snapshot = ConfigSnapshot {
            model: self.model_cfg.clone(),
            train: self.train_cfg.clone(),
        };
        let config = toml::to_string(&snapshot)
            .map_err(|e| Error::Format(format!("config snapshot serialization failed: {e}")))?;

        let mut payload = Vec::new();
        push_u32(&mut payload, config.len() as u32);
        payload.extend_from_slice(config.as_bytes());
        let block_count = self.params.len() + 6;
        push_u32(&mut payload, block_count as u32);
        for (name, shape, values) in &self.params {
            push_block_header(&mut payload, name, <E as BinaryElem>::DTYPE, shape);
            for &v in values {
                v.push_le(&mut payload);
            }
        }
        push_block_header(&mut payload, "optimizer.m", <E as BinaryElem>::DTYPE, &[self.opt_m.len()]);
        for &v in &self.opt_m {
            v.push_le(&mut payload);
        }
        push_block_header(&mut payload, "optimizer.v", <E as BinaryElem>::DTYPE, &[self.opt_v.len()]);
        for &v in &self.opt_v {
            v.push_le(&mut payload);
        }
        push_block_header(&mut payload, "optimizer.step", DT_U64, &[1]);
        payload.extend_from_slice(&self.opt_step.to_le_bytes());
        push_block_header(&mut payload, "epoch", DT_U64, &[1]);
        payload.extend_from_slice(&self.epoch.to_le_bytes());
        push_block_header(&mut payload, "rng.seed", DT_U8, &[32]);
        payload.extend_from_slice(&self.rng_seed);
        push_block_header(&mut payload, "rng.word_pos", DT_U64, &[2]);
        payload.extend_from_slice(&(self.rng_word_pos as u64).to_le_bytes());
        payload.extend_from_slice(&((self.rng_word_pos >> 64) as u64).to_le_bytes());

        let mut out = Vec::with_capacity(payload.len() + 44);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&Sha256::digest(&payload));
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint<E>> {
        if bytes.len() < 44 || &bytes[..8] != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let payload = &bytes[44..];
        let digest = Sha256::digest(payload);
        if digest[..] != bytes[12..44] {
            return Err(Error::Integrity("checkpoint checksum mismatch".into()));
        }

        let mut r = Reader { buf: payload, pos: 0 };
        let config_len = r.u32()? as usize;
        let config_text = std::str::from_utf8(r.take(config_len)?)
            .map_err(|_| Error::Format("config snapshot is not UTF-8".into()))?;
        let snapshot: ConfigSnapshot = toml::from_str(config_text)
            .map_err(|e| Error::Format(format!("bad config snapshot: {e}")))?;

        let block_count = r.u32()? as usize;
        let mut params = Vec::new();
        let mut opt_m = None;
        let mut opt_v = None;
        let mut opt_step = None;
        let mut epoch = None;
        let mut rng_seed = None;
        let mut rng_word_pos = None;
        for _ in 0..block_count {
            let (name, dtype, shape) = read_block_header(&mut r)?;
            let len: usize = shape.iter().product();
            match name.as_str() {
                "optimizer.step" | "epoch" => {
                    expect_dtype(&name, dtype, DT_U64)?;
                    let v = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
                    if name == "epoch" {
                        epoch = Some(v);
                    } else {
                        opt_step = Some(v);
                    }
                }
                "rng.seed" => {
                    expect_dtype(&name, dtype, DT_U8)?;
                    let raw = r.take(len)?;
                    let seed: [u8; 32] = raw
                        .try_into()
                        .map_err(|_| Error::Format("rng.seed must hold 32 bytes".into()))?;
                    rng_seed = Some(seed);
                }
                "rng.word_pos" => {
                    expect_dtype(&name, dtype, DT_U64)?;
                    let lo = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
                    let hi = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
                    rng_word_pos = Some((lo as u128) | ((hi as u128) << 64));
                }
                "optimizer.m" | "optimizer.v" => {
                    expect_dtype(&name, dtype, <E as BinaryElem>::DTYPE)?;
                    let values = read_values::<E>(&mut r, len)?;
                    if name == "optimizer.m" {
                        opt_m = Some(values);
                    } else {
                        opt_v = Some(values);
                    }
                }
                _ => {
                    expect_dtype(&name, dtype, <E as BinaryElem>::DTYPE)?;
                    let values = read_values::<E>(&mut r, len)?;
                    params.push((name, shape, values));
                }
            }
        }
        if r.pos != payload.len() {
            return Err(Error::Format("trailing bytes after final block".into()));
        }
        let missing = |what: &str| Error::Format(format!("checkpoint is missing {what}"));
        Ok(Checkpoint {
            model_cfg: snapshot.model,
            train_cfg: snapshot.train,
            params,
            opt_m: opt_m.ok_or_else(|| missing("optimizer.m"))?,
            opt_v: opt_v.ok_or_else(|| missing("optimizer.v"))?,
            opt_step: opt_step.ok_or_else(|| missing("optimizer.step"))?,
            epoch: epoch.ok_or_else(|| missing("epoch"))?,
            rng_seed: rng_seed.ok_or_else(|| missing("rng.seed"))?,
            rng_word_pos: rng_word_pos.ok_or_else(|| missing("rng.word_pos"))?,
        })
    }
}

pub fn save_checkpoint<E: BinaryElem>(checkpoint: &Checkpoint<E>, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint<E: BinaryElem>(path: &Path) -> Result<Checkpoint<E>> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_block_header(out: &mut Vec<u8>, name: &str, dtype: u8, shape: &[usize]) {
    push_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    out.push(dtype);
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "checkpoint truncated at byte {}",
                self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

fn read_block_header(r: &mut Reader) -> Result<(String, u8, Vec<usize>)> {
    let name_len = r.u32()? as usize;
    let name = std::str::from_utf8(r.take(name_len)?)
        .map_err(|_| Error::Format("block name is not UTF-8".into()))?
        .to_string();
    let dtype = r.u8()?;
    let ndim = r.u8()? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let d = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        shape.push(d as usize);
    }
    Ok((name, dtype, shape))
}

fn read_values<E: BinaryElem>(r: &mut Reader, len: usize) -> Result<Vec<E>> {
    let raw = r.take(len * E::SIZE)?;
    Ok(raw.chunks_exact(E::SIZE).map(E::parse_le).collect())
}

fn expect_dtype(name: &str, found: u8, expected: u8) -> Result<()> {
    if found != expected {
        return Err(Error::Format(format!(
            "block {name} has dtype tag {found}, expected {expected}"
        )));
    }
    Ok(())
}
