//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "RCAP"                      4 bytes
//! version                     u32
//! repeated until end of file:
//!   name length               u32
//!   name                      UTF-8 bytes
//!   rank                      u32
//!   dims                      rank × u64
//!   payload                   product(dims) × f64
//! ```

use std::io::{self, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"RCAP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint is missing tensor `{0}`")]
    Missing(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch { name: String, found: Vec<usize>, expected: Vec<usize> },
}

/// Named tensors in file order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor<f64>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push<T: Scalar>(&mut self, name: impl Into<String>, tensor: &Tensor<T>) {
        let data = tensor.to_f64_vec();
        self.tensors.push((name.into(), Tensor::from_parts(tensor.shape().to_vec(), data)));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f64>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    /// Tensor `name` converted to `T`, required to have `shape` when given.
    pub fn load<T: Scalar>(&self, name: &str, shape: Option<&[usize]>) -> Result<Tensor<T>, CheckpointError> {
        let t = self.get(name).ok_or_else(|| CheckpointError::Missing(name.to_string()))?;
        if let Some(shape) = shape {
            if t.shape() != shape {
                return Err(CheckpointError::ShapeMismatch {
                    name: name.to_string(),
                    found: t.shape().to_vec(),
                    expected: shape.to_vec(),
                });
            }
        }
        let data = t.data().iter().map(|&x| T::lit(x)).collect();
        Ok(Tensor::from_parts(t.shape().to_vec(), data))
    }

    pub fn encode<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        for (name, t) in &self.tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &x in t.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut cur = bytes;
        let mut magic = [0u8; 4];
        if cur.read_exact(&mut magic).is_err() || &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(&mut cur)?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version { found: version, expected: FORMAT_VERSION });
        }
        let mut tensors = Vec::new();
        while !cur.is_empty() {
            let name_len = read_u32(&mut cur)? as usize;
            if name_len > cur.len() {
                return Err(CheckpointError::Malformed("name runs past end of file".into()));
            }
            let (name, rest) = cur.split_at(name_len);
            let name = std::str::from_utf8(name)
                .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?
                .to_string();
            cur = rest;
            let rank = read_u32(&mut cur)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(&mut cur)? as usize);
            }
            let count: usize = shape.iter().product();
            if count.checked_mul(8).is_none_or(|b| b > cur.len()) {
                return Err(CheckpointError::Malformed(format!("payload of `{}` truncated", name)));
            }
            let mut data = Vec::with_capacity(count);
            for _ in 0..count {
                let mut buf = [0u8; 8];
                cur.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            let tensor = Tensor::new(shape, data)
                .map_err(|e| CheckpointError::Malformed(format!("tensor `{}`: {}", name, e)))?;
            tensors.push((name, tensor));
        }
        Ok(Checkpoint { tensors })
    }
}

fn read_u32(cur: &mut &[u8]) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    cur.read_exact(&mut buf).map_err(|_| CheckpointError::Malformed("unexpected end of file".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(cur: &mut &[u8]) -> Result<u64, CheckpointError> {
    let mut buf = [0u8; 8];
    cur.read_exact(&mut buf).map_err(|_| CheckpointError::Malformed("unexpected end of file".into()))?;
    Ok(u64::from_le_bytes(buf))
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let file = std::fs::File::create(path)?;
    ckpt.encode(io::BufWriter::new(file))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path)?;
    Checkpoint::decode(&bytes)
}
