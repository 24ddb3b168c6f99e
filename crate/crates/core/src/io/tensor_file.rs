use std::path::Path;

use ndarray::Array2;

use super::{write_atomic, Reader};
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"MFPT";
pub const TENSOR_VERSION: u8 = 1;
const DTYPE_F32: u8 = 0;

/// `MFPT` bytes for a 2-D f32 tensor.
pub fn encode_tensor(x: &Array2<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 4 * x.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&[TENSOR_VERSION, DTYPE_F32, 2, 0]);
    out.extend_from_slice(&(x.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(x.ncols() as u64).to_le_bytes());
    for v in x.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses `MFPT` bytes. A 1-D tensor of length `n` is returned as `1 × n`.
pub fn decode_tensor(bytes: &[u8]) -> Result<Array2<f32>> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic")? != TENSOR_MAGIC {
        return Err(Error::Corrupt("not an MFPT tensor file".into()));
    }
    let version = r.u8("version")?;
    if version != TENSOR_VERSION {
        return Err(Error::Corrupt(format!("unsupported tensor file version {version}")));
    }
    let dtype = r.u8("dtype")?;
    if dtype != DTYPE_F32 {
        return Err(Error::Corrupt(format!("unsupported dtype {dtype}")));
    }
    let ndim = r.u8("ndim")?;
    r.u8("reserved")?;
    let dims = match ndim {
        1 => (1, r.u64("dims")? as usize),
        2 => (r.u64("dims")? as usize, r.u64("dims")? as usize),
        _ => return Err(Error::Corrupt(format!("ndim must be 1 or 2, got {ndim}"))),
    };
    let count = dims
        .0
        .checked_mul(dims.1)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Corrupt("tensor dimensions overflow".into()))?;
    let payload = r.take(count, "payload")?;
    r.finish()?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(Array2::from_shape_vec(dims, data).expect("length checked"))
}

pub fn write_tensor(path: &Path, x: &Array2<f32>) -> Result<()> {
    write_atomic(path, &encode_tensor(x))
}

pub fn read_tensor(path: &Path) -> Result<Array2<f32>> {
    decode_tensor(&std::fs::read(path)?)
}
