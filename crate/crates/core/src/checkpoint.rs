//! Versioned binary checkpoints: model weights, optimizer state, epoch
//! progress, and the best-so-far snapshot, all keyed to a configuration
//! fingerprint so a checkpoint can only resume the run that produced it.
//!
//! All numbers are little-endian; f64 values round-trip bit-exactly, so a
//! resumed run continues from precisely the state the interrupted run
//! would have had.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attention::FusionConfig;
use crate::optim::Adam;
use crate::tensor::Tensor;

/// File signature; changes only if the container format itself changes.
pub const MAGIC: [u8; 8] = *b"EMOFUSE\0";
/// Current layout version.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint was written by a different configuration")]
    ConfigMismatch,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// Everything needed to resume training or to evaluate a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Architecture of the stored weights; embedded so evaluation can
    /// rebuild the model from the checkpoint alone.
    pub model_config: FusionConfig,
    /// Number of fully completed epochs.
    pub completed_epochs: usize,
    /// Epoch index of the best validation score seen so far.
    pub best_epoch: Option<usize>,
    /// The best selection-metric value (meaning depends on the metric).
    pub best_value: f64,
    /// Current weights, in registration order.
    pub params: Vec<(String, Tensor)>,
    /// Optimizer moments and per-parameter step counts.
    pub adam: Adam,
    /// Weights at the best epoch, if any epoch has finished.
    pub best_params: Option<Vec<(String, Tensor)>>,
}

/// SHA-256 of the canonical configuration string. Stored in every
/// checkpoint; load refuses to resume under a different configuration.
pub fn config_fingerprint(config_key: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(config_key.as_bytes());
    hasher.finalize().into()
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Encoding

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(buf: &mut Vec<u8>, bytes: &[u8]) {
    put_u64(buf, bytes.len() as u64);
    buf.extend_from_slice(bytes);
}

fn put_tensors(buf: &mut Vec<u8>, tensors: &[(String, Tensor)]) {
    put_u64(buf, tensors.len() as u64);
    for (name, t) in tensors {
        put_bytes(buf, name.as_bytes());
        put_u64(buf, t.shape().len() as u64);
        for &d in t.shape() {
            put_u64(buf, d as u64);
        }
        for &v in t.data() {
            put_f64(buf, v);
        }
    }
}

/// Serializes and atomically replaces `path` (write-then-rename), so a
/// crash mid-save never leaves a truncated checkpoint behind.
pub fn save(path: &Path, config_key: &str, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    buf.extend_from_slice(&config_fingerprint(config_key));

    let config_json = serde_json::to_vec(&ckpt.model_config)
        .map_err(|e| CheckpointError::Corrupt(format!("config encode: {e}")))?;
    put_bytes(&mut buf, &config_json);

    put_u64(&mut buf, ckpt.completed_epochs as u64);
    put_u64(
        &mut buf,
        ckpt.best_epoch.map_or(u64::MAX, |e| e as u64),
    );
    put_f64(&mut buf, ckpt.best_value);

    put_tensors(&mut buf, &ckpt.params);

    put_f64(&mut buf, ckpt.adam.lr);
    put_f64(&mut buf, ckpt.adam.beta1);
    put_f64(&mut buf, ckpt.adam.beta2);
    put_f64(&mut buf, ckpt.adam.eps);
    put_u64(&mut buf, ckpt.adam.t.len() as u64);
    for i in 0..ckpt.adam.t.len() {
        put_u64(&mut buf, ckpt.adam.t[i]);
        put_u64(&mut buf, ckpt.adam.m[i].len() as u64);
        for &v in &ckpt.adam.m[i] {
            put_f64(&mut buf, v);
        }
        for &v in &ckpt.adam.v[i] {
            put_f64(&mut buf, v);
        }
    }

    match &ckpt.best_params {
        Some(best) => {
            buf.push(1);
            put_tensors(&mut buf, best);
        }
        None => buf.push(0),
    }

    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &buf).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// Decoding

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::Corrupt(format!(
                "unexpected end of file at offset {}",
                self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize, CheckpointError> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| CheckpointError::Corrupt(format!("length {v} overflows")))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| {
            CheckpointError::Corrupt("tensor length overflows".into())
        })?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn bytes(&mut self) -> Result<&'a [u8], CheckpointError> {
        let n = self.usize()?;
        self.take(n)
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let raw = self.bytes()?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| CheckpointError::Corrupt("non-utf8 string".into()))
    }

    fn tensors(&mut self) -> Result<Vec<(String, Tensor)>, CheckpointError> {
        let count = self.usize()?;
        let mut out = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = self.string()?;
            let rank = self.usize()?;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(self.usize()?);
            }
            let len: usize = shape.iter().product();
            let data = self.f64s(len)?;
            let tensor = Tensor::new(shape, data)
                .map_err(|e| CheckpointError::Corrupt(format!("tensor {name}: {e}")))?;
            out.push((name, tensor.with_requires_grad(true)));
        }
        Ok(out)
    }
}

/// Reads a checkpoint; when `expected_config_key` is given, the stored
/// fingerprint must match it.
pub fn load(
    path: &Path,
    expected_config_key: Option<&str>,
) -> Result<Checkpoint, CheckpointError> {
    let buf = fs::read(path).map_err(io_err(path))?;
    let mut r = Reader { buf: &buf, pos: 0 };

    if r.take(8)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let stored_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
    if let Some(key) = expected_config_key {
        if stored_hash != config_fingerprint(key) {
            return Err(CheckpointError::ConfigMismatch);
        }
    }

    let config_json = r.bytes()?;
    let model_config: FusionConfig = serde_json::from_slice(config_json)
        .map_err(|e| CheckpointError::Corrupt(format!("config decode: {e}")))?;

    let completed_epochs = r.usize()?;
    let best_epoch_raw = r.u64()?;
    let best_epoch = (best_epoch_raw != u64::MAX).then_some(best_epoch_raw as usize);
    let best_value = r.f64()?;

    let params = r.tensors()?;

    let lr = r.f64()?;
    let beta1 = r.f64()?;
    let beta2 = r.f64()?;
    let eps = r.f64()?;
    let n = r.usize()?;
    if n != params.len() {
        return Err(CheckpointError::Corrupt(format!(
            "optimizer tracks {n} tensors but model has {}",
            params.len()
        )));
    }
    let mut t = Vec::with_capacity(n);
    let mut m = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for i in 0..n {
        t.push(r.u64()?);
        let len = r.usize()?;
        if len != params[i].1.len() {
            return Err(CheckpointError::Corrupt(format!(
                "moment buffer {i} has {len} values, tensor has {}",
                params[i].1.len()
            )));
        }
        m.push(r.f64s(len)?);
        v.push(r.f64s(len)?);
    }
    let adam = Adam {
        lr,
        beta1,
        beta2,
        eps,
        m,
        v,
        t,
    };

    let has_best = r.take(1)?[0];
    let best_params = match has_best {
        0 => None,
        1 => Some(r.tensors()?),
        other => {
            return Err(CheckpointError::Corrupt(format!(
                "bad best-snapshot flag {other}"
            )))
        }
    };

    if r.pos != buf.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} trailing bytes",
            buf.len() - r.pos
        )));
    }

    Ok(Checkpoint {
        model_config,
        completed_epochs,
        best_epoch,
        best_value,
        params,
        adam,
        best_params,
    })
}
