//! Versioned little-endian binary dump of tensor lists.
//!
//! Layout: `b"SACXTNSR"`, `u32` version, `u64` tensor count, then per tensor
//! a `u32` rank, `rank × u64` dims and the raw `f64` bit patterns.

use std::io::{Read, Write};

use super::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 8] = b"SACXTNSR";
pub const TENSOR_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic bytes")]
    Magic,
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("corrupt tensor record: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn write_tensors<W: Write>(mut w: W, tensors: &[&Tensor]) -> std::io::Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&TENSOR_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for t in tensors {
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_bits().to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<Tensor>, FormatError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(FormatError::Magic);
    }
    let version = read_u32(&mut r)?;
    if version != TENSOR_FORMAT_VERSION {
        return Err(FormatError::Version(version));
    }
    let count = read_u64(&mut r)?;
    let mut out = Vec::new();
    for i in 0..count {
        let rank = read_u32(&mut r)? as usize;
        if rank == 0 || rank > 8 {
            return Err(FormatError::Corrupt(format!("tensor {i} has rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u64(&mut r)?);
        }
        let bad_shape = || FormatError::Corrupt(format!("tensor {i} has shape {dims:?}"));
        let n = dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n > 0 && n < (1 << 32))
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(bad_shape)?;
        let shape: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_bits(read_u64(&mut r)?));
        }
        out.push(Tensor::new(shape, data).map_err(|e| FormatError::Corrupt(e.to_string()))?);
    }
    Ok(out)
}
