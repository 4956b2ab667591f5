//! `PFAT` binary tensor format.
//!
//! ```text
//! magic    4 bytes  "PFAT"
//! version  u32 LE   (currently 1)
//! ndim     u8
//! dims     ndim x u32 LE
//! payload  prod(dims) x f32 LE, row-major
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{io_err, HarnessError, Result};
use crate::tensor::DenseTensor;

pub const MAGIC: &[u8; 4] = b"PFAT";
pub const VERSION: u32 = 1;

pub fn encode(t: &DenseTensor) -> Result<Vec<u8>> {
    if t.rank() > u8::MAX as usize {
        return Err(HarnessError::Format(format!("rank {} exceeds 255", t.rank())));
    }
    let mut out = Vec::with_capacity(9 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(t.rank() as u8);
    for &d in t.dims() {
        let d = u32::try_from(d).map_err(|_| HarnessError::Format(format!("extent {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<DenseTensor> {
    let need = |expected: usize| -> Result<()> {
        if bytes.len() < expected {
            Err(HarnessError::Truncated {
                expected,
                found: bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    need(9)?;
    if &bytes[..4] != MAGIC {
        return Err(HarnessError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(HarnessError::Format(format!("unsupported version {version}")));
    }
    let ndim = bytes[8] as usize;
    let header = 9 + 4 * ndim;
    need(header)?;
    let dims: Vec<usize> = bytes[9..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| HarnessError::Format(format!("dims {dims:?} overflow")))?;
    let total = header + 4 * count;
    need(total)?;
    if bytes.len() > total {
        return Err(HarnessError::Format(format!(
            "{} trailing bytes after payload",
            bytes.len() - total
        )));
    }
    let data = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DenseTensor::new(&dims, data)?)
}

pub fn write_to<W: Write>(mut w: W, t: &DenseTensor) -> Result<()> {
    let bytes = encode(t)?;
    w.write_all(&bytes).map_err(io_err("<writer>"))
}

pub fn read_from<R: Read>(mut r: R) -> Result<DenseTensor> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(io_err("<reader>"))?;
    decode(&bytes)
}

pub fn save(path: impl AsRef<Path>, t: &DenseTensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t)?).map_err(io_err(path))
}

pub fn load(path: impl AsRef<Path>) -> Result<DenseTensor> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(io_err(path))?)
}
