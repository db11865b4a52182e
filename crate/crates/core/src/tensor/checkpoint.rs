//! Named-array checkpoint container.
//!
//! ```text
//! magic    8 bytes  "MSDNCKPT"
//! version  u32      1
//! count    u32      number of arrays
//! count x {
//!   name_len u32, name (UTF-8)
//!   rank u32, rank x u64 dims
//!   product(dims) x f64 payload
//! }
//! ```
//! All integers and floats little-endian.

use std::collections::HashSet;
use std::io::{Read, Write};

use super::{numel, Result, TensorError};
use crate::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MSDNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray<S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<S>,
}

impl<S: Scalar> NamedArray<S> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<S>) -> Self {
        debug_assert_eq!(numel(&shape), values.len());
        Self { name: name.into(), shape, values }
    }
}

fn bad(msg: impl Into<String>) -> TensorError {
    TensorError::Checkpoint(msg.into())
}

pub fn write_checkpoint<S: Scalar, W: Write>(mut w: W, arrays: &[NamedArray<S>]) -> Result<()> {
    let mut names = HashSet::new();
    for a in arrays {
        if !names.insert(a.name.as_str()) {
            return Err(bad(format!("duplicate name {:?}", a.name)));
        }
        if numel(&a.shape) != a.values.len() {
            return Err(bad(format!("{}: {} values for shape {:?}", a.name, a.values.len(), a.shape)));
        }
    }
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(arrays.len() as u32).to_le_bytes())?;
    for a in arrays {
        w.write_all(&(a.name.len() as u32).to_le_bytes())?;
        w.write_all(a.name.as_bytes())?;
        w.write_all(&(a.shape.len() as u32).to_le_bytes())?;
        for &d in &a.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(a.values.len() * 8);
        for v in &a.values {
            buf.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<S: Scalar, R: Read>(mut r: R) -> Result<Vec<NamedArray<S>>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    let mut names = HashSet::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        if len > 1 << 16 {
            return Err(bad(format!("name length {len}")));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("name is not UTF-8"))?;
        if !names.insert(name.clone()) {
            return Err(bad(format!("duplicate name {name:?}")));
        }
        let rank = read_u32(&mut r)? as usize;
        if rank > 8 {
            return Err(bad(format!("{name}: rank {rank}")));
        }
        let shape = (0..rank).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = numel(&shape);
        let mut payload = vec![0u8; n * 8];
        r.read_exact(&mut payload)?;
        let values = payload
            .chunks_exact(8)
            .map(|c| S::from_f64_lossy(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
            .collect();
        out.push(NamedArray { name, shape, values });
    }
    Ok(out)
}
