//! The DNIT tensor file format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "DNIT"
//! 4       1     version (1)
//! 5       1     dtype (0 = f32 little-endian)
//! 6       16    dims W, H, L, C as u32 little-endian
//! 22      4*N   payload in (L, H, W, C) order
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Dims, LatentTensor};

pub const MAGIC: &[u8; 4] = b"DNIT";
pub const VERSION: u8 = 1;
pub const DTYPE_F32_LE: u8 = 0;
pub const HEADER_LEN: usize = 22;

pub fn encode_tensor(t: &LatentTensor) -> Result<Vec<u8>> {
    t.check_finite()?;
    let d = t.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * d.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(DTYPE_F32_LE);
    for dim in d.to_array() {
        let dim = u32::try_from(dim)
            .map_err(|_| Error::InvalidParam(format!("dimension {dim} exceeds u32")))?;
        out.extend_from_slice(&dim.to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<LatentTensor> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let (version, dtype) = (bytes[4], bytes[5]);
    if version != VERSION || dtype != DTYPE_F32_LE {
        return Err(Error::Unsupported {
            path: path.to_path_buf(),
            version,
            dtype,
        });
    }
    let mut dims = [0usize; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        let o = 6 + 4 * i;
        *d = u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    }
    let dims = Dims::new(dims[0], dims[1], dims[2], dims[3])?;
    let payload = &bytes[HEADER_LEN..];
    let expected = 4 * dims.len();
    if payload.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    if payload.len() != expected {
        return Err(Error::DimsMismatch {
            path: path.to_path_buf(),
            declared: dims.len(),
            found: payload.len() / 4,
        });
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let t = LatentTensor::from_vec(dims, data)?;
    t.check_finite()?;
    Ok(t)
}

pub fn write_tensor(t: &LatentTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(t)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<LatentTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, path)
}
