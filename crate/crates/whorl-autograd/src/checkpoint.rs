//! Binary checkpoint formats.
//!
//! Model checkpoints are the interchange format:
//!
//! ```text
//! magic   b"IFV1"
//! version u32 LE (currently 1)
//! count   u32 LE
//! then per parameter:
//!   name_len u32 LE, name bytes (UTF-8)
//!   rank     u32 LE
//!   extents  rank x u32 LE
//!   values   prod(extents) x f32 LE
//! ```
//!
//! Values are stored at 32-bit precision, which is enough to run inference
//! and to warm-start training. Exactly resuming an interrupted run needs the
//! full 64-bit parameters plus the optimizer moments, so trainers write a
//! separate training-state file (magic `IFVS`) alongside the model file.
//!
//! Both writers go through a temp file in the target directory followed by a
//! rename, so an interrupted write never corrupts an existing checkpoint.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::optim::Adam;
use crate::param::Param;

const MODEL_MAGIC: &[u8; 4] = b"IFV1";
const STATE_MAGIC: &[u8; 4] = b"IFVS";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes, not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("parameter {name}: checkpoint shape {found:?} does not match model shape {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint is missing parameter {0}")]
    Missing(String),
    #[error("checkpoint has unknown parameter {0}")]
    Unknown(String),
}

/// One named tensor read back from a checkpoint.
#[derive(Debug, Clone)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp-write");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Serializes parameters in the given order.
pub fn save(path: &Path, params: &[Param]) -> Result<(), CheckpointError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        let name = p.name().as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&(p.shape().len() as u32).to_le_bytes());
        for &e in p.shape() {
            buf.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in p.value() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    write_atomic(path, &buf)?;
    Ok(())
}

struct Reader<R: Read> {
    src: R,
}

impl<R: Read> Reader<R> {
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let mut b = [0u8; 4];
        self.src.read_exact(&mut b).map_err(truncated)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        let mut b = [0u8; 8];
        self.src.read_exact(&mut b).map_err(truncated)?;
        Ok(u64::from_le_bytes(b))
    }

    fn f32(&mut self) -> Result<f32, CheckpointError> {
        let mut b = [0u8; 4];
        self.src.read_exact(&mut b).map_err(truncated)?;
        Ok(f32::from_le_bytes(b))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        let mut b = [0u8; 8];
        self.src.read_exact(&mut b).map_err(truncated)?;
        Ok(f64::from_le_bytes(b))
    }

    fn name(&mut self) -> Result<String, CheckpointError> {
        let len = self.u32()? as usize;
        if len > 1 << 16 {
            return Err(CheckpointError::Corrupt(format!(
                "parameter name length {len} is implausible"
            )));
        }
        let mut b = vec![0u8; len];
        self.src.read_exact(&mut b).map_err(truncated)?;
        String::from_utf8(b)
            .map_err(|_| CheckpointError::Corrupt("parameter name is not UTF-8".into()))
    }
}

fn truncated(e: io::Error) -> CheckpointError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        CheckpointError::Corrupt("file ends mid-record".into())
    } else {
        CheckpointError::Io(e)
    }
}

fn open_with_magic(path: &Path, magic: &[u8; 4]) -> Result<Reader<fs::File>, CheckpointError> {
    let mut f = fs::File::open(path)?;
    let mut m = [0u8; 4];
    f.read_exact(&mut m).map_err(truncated)?;
    if &m != magic {
        return Err(CheckpointError::BadMagic);
    }
    let mut r = Reader { src: f };
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    Ok(r)
}

/// Reads every tensor in a model checkpoint.
pub fn load(path: &Path) -> Result<Vec<TensorRecord>, CheckpointError> {
    let mut r = open_with_magic(path, MODEL_MAGIC)?;
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.name()?;
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(CheckpointError::Corrupt(format!(
                "rank {rank} is implausible"
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(r.f32()?);
        }
        out.push(TensorRecord {
            name,
            shape,
            values,
        });
    }
    Ok(out)
}

/// Loads a checkpoint into an existing parameter set. Names must match the
/// file exactly (no extras on either side) and shapes must agree.
pub fn load_into(path: &Path, params: &[Param]) -> Result<(), CheckpointError> {
    let records = load(path)?;
    let mut by_name: std::collections::HashMap<&str, &TensorRecord> =
        records.iter().map(|r| (r.name.as_str(), r)).collect();
    for p in params {
        let rec = by_name
            .remove(p.name())
            .ok_or_else(|| CheckpointError::Missing(p.name().to_string()))?;
        if rec.shape != p.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: p.name().to_string(),
                expected: p.shape().to_vec(),
                found: rec.shape.clone(),
            });
        }
        p.set_value(rec.values.iter().map(|&v| v as f64).collect());
    }
    if let Some(name) = by_name.keys().next() {
        return Err(CheckpointError::Unknown(name.to_string()));
    }
    Ok(())
}

/// Writes the full-precision training state (parameters plus Adam moments),
/// enabling bit-exact resumption.
pub fn save_train_state(path: &Path, adam: &Adam) -> Result<(), CheckpointError> {
    let (t, m, v) = adam.state();
    let params = adam.params();
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(STATE_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&t.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (i, p) in params.iter().enumerate() {
        let name = p.name().as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&(p.numel() as u64).to_le_bytes());
        for val in p.value() {
            buf.extend_from_slice(&val.to_le_bytes());
        }
        for val in &m[i] {
            buf.extend_from_slice(&val.to_le_bytes());
        }
        for val in &v[i] {
            buf.extend_from_slice(&val.to_le_bytes());
        }
    }
    write_atomic(path, &buf)?;
    Ok(())
}

/// Restores parameters and optimizer moments written by [`save_train_state`].
pub fn load_train_state(path: &Path, adam: &mut Adam) -> Result<(), CheckpointError> {
    let mut r = open_with_magic(path, STATE_MAGIC)?;
    let t = r.u64()?;
    let count = r.u32()? as usize;
    if count != adam.params().len() {
        return Err(CheckpointError::Corrupt(format!(
            "state has {count} parameters, optimizer has {}",
            adam.params().len()
        )));
    }
    let mut ms = Vec::with_capacity(count);
    let mut vs = Vec::with_capacity(count);
    for i in 0..count {
        let name = r.name()?;
        let p = &adam.params()[i];
        if name != p.name() {
            return Err(CheckpointError::Corrupt(format!(
                "state parameter {name} at position {i}, expected {}",
                p.name()
            )));
        }
        let n = r.u64()? as usize;
        if n != p.numel() {
            return Err(CheckpointError::ShapeMismatch {
                name,
                expected: vec![p.numel()],
                found: vec![n],
            });
        }
        let mut val = Vec::with_capacity(n);
        for _ in 0..n {
            val.push(r.f64()?);
        }
        let mut m = Vec::with_capacity(n);
        for _ in 0..n {
            m.push(r.f64()?);
        }
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(r.f64()?);
        }
        p.set_value(val);
        ms.push(m);
        vs.push(v);
    }
    adam.restore_state(t, ms, vs);
    Ok(())
}
