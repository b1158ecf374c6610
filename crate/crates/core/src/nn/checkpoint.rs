//! Binary checkpoint: magic `SGCKPT`, u32 format version, u64-length JSON
//! metadata, u32 tensor count, then per tensor a u32-length name, u32 rank,
//! u64 dims and little-endian f32 data.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{aux_layout, lm_layout, ParamSet};
use super::{ModelConfig, NnError, TrainConfig, Transformer};
use crate::difficulty::NUM_FEATURES;
use crate::prompt::PromptType;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 6] = b"SGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LogSummary {
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub steps: usize,
    pub best_val_ce: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub vocab_hash: String,
    pub prompt_type: PromptType,
    /// Per-class mean of the normalized training descriptors, used to build
    /// feature prompts at generation time.
    pub class_means: Vec<[f64; NUM_FEATURES]>,
    pub log_summary: LogSummary,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn checkpoint_bytes<T: Scalar>(model: &Transformer<T>, meta: &CheckpointMeta) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    let json = serde_json::to_vec(meta).expect("metadata serializes");
    put_u64(&mut out, json.len() as u64);
    out.extend_from_slice(&json);
    let tensors: Vec<_> = model.lm.tensors.iter().chain(&model.aux.tensors).collect();
    put_u32(&mut out, tensors.len() as u32);
    for t in tensors {
        put_u32(&mut out, t.name.len() as u32);
        out.extend_from_slice(t.name.as_bytes());
        put_u32(&mut out, t.shape.len() as u32);
        for &d in &t.shape {
            put_u64(&mut out, d as u64);
        }
        for &x in &t.data {
            out.extend_from_slice(&x.to_f32().unwrap().to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint<T: Scalar>(path: &Path, model: &Transformer<T>, meta: &CheckpointMeta) -> Result<(), NnError> {
    std::fs::write(path, checkpoint_bytes(model, meta)).map_err(|e| NnError::Io(format!("{}: {e}", path.display())))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| NnError::CorruptCheckpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint. When `vocab_hash` is given it must match the one
/// recorded at training time.
pub fn checkpoint_from_bytes(
    bytes: &[u8],
    vocab_hash: Option<&str>,
) -> Result<(Transformer<f32>, CheckpointMeta), NnError> {
    let corrupt = |m: String| NnError::CorruptCheckpoint(m);
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
        return Err(corrupt("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let len = r.u64()?;
    let json = r.take(usize::try_from(len).map_err(|_| corrupt("metadata length".into()))?)?;
    let meta: CheckpointMeta = serde_json::from_slice(json).map_err(|e| corrupt(format!("metadata: {e}")))?;
    meta.model.validate().map_err(|e| corrupt(e.to_string()))?;
    if let Some(h) = vocab_hash {
        if h != meta.vocab_hash {
            return Err(NnError::VocabMismatch { expected: h.to_string(), found: meta.vocab_hash.clone() });
        }
    }
    let mut lm: ParamSet<f32> = lm_layout(&meta.model);
    let mut aux: ParamSet<f32> = aux_layout(&meta.model);
    let count = r.u32()? as usize;
    if count != lm.tensors.len() + aux.tensors.len() {
        return Err(corrupt(format!("expected {} tensors, found {count}", lm.tensors.len() + aux.tensors.len())));
    }
    for t in lm.tensors.iter_mut().chain(aux.tensors.iter_mut()) {
        let n = r.u32()? as usize;
        let name = r.take(n)?;
        if name != t.name.as_bytes() {
            return Err(corrupt(format!("expected tensor {}", t.name)));
        }
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        if shape != t.shape {
            return Err(corrupt(format!("shape mismatch for {}", t.name)));
        }
        let raw = r.take(t.data.len() * 4)?;
        for (x, c) in t.data.iter_mut().zip(raw.chunks_exact(4)) {
            *x = f32::from_le_bytes(c.try_into().unwrap());
        }
        if !t.data.iter().all(|x| x.is_finite()) {
            return Err(corrupt(format!("non-finite values in {}", t.name)));
        }
    }
    if r.pos != bytes.len() {
        return Err(corrupt("trailing bytes".into()));
    }
    Ok((Transformer { cfg: meta.model.clone(), lm, aux }, meta))
}

pub fn load_checkpoint(path: &Path, vocab_hash: Option<&str>) -> Result<(Transformer<f32>, CheckpointMeta), NnError> {
    let bytes = std::fs::read(path).map_err(|e| NnError::Io(format!("{}: {e}", path.display())))?;
    checkpoint_from_bytes(&bytes, vocab_hash)
}
