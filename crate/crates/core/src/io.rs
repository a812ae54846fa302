//! Binary tensor files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes   | content                                   |
//! |---------|-------------------------------------------|
//! | 0..8    | magic `FBSTNSR1`                          |
//! | 8..32   | `c`, `h`, `w` as `u64`                    |
//! | 32..48  | reserved, zero                            |
//! | 48..    | `c·h·w` IEEE-754 `f64` values, `(c,i,j)`  |

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{check_finite, LatentFeature, Shape};

pub const MAGIC: &[u8; 8] = b"FBSTNSR1";
pub const HEADER_LEN: usize = 48;

pub fn encode_tensor(f: &LatentFeature) -> Result<Vec<u8>> {
    check_finite(f.data())?;
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * f.data().len());
    buf.extend_from_slice(MAGIC);
    for dim in [f.channels(), f.height(), f.width()] {
        buf.extend_from_slice(&(dim as u64).to_le_bytes());
    }
    buf.extend_from_slice(&[0u8; 16]);
    for v in f.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

/// Parses tensor file bytes; `path` is only used for error messages.
pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<LatentFeature> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        if bytes.len() < MAGIC.len() && MAGIC.starts_with(bytes) {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                detail: format!("{} bytes, shorter than the magic", bytes.len()),
            });
        }
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            detail: format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
        });
    }
    let dim = |k: usize| {
        let start = 8 + 8 * k;
        u64::from_le_bytes(bytes[start..start + 8].try_into().expect("8-byte slice"))
    };
    let (c, h, w) = (dim(0), dim(1), dim(2));
    if bytes[32..HEADER_LEN].iter().any(|&b| b != 0) {
        return Err(Error::InvalidHeader(format!(
            "reserved header bytes of {} are not zero",
            path.display()
        )));
    }
    let payload = &bytes[HEADER_LEN..];
    if !payload.len().is_multiple_of(8) {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            detail: format!("payload of {} bytes is not whole f64 values", payload.len()),
        });
    }
    let declared = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::InvalidHeader(format!("shape {c}x{h}x{w} overflows")))?;
    let actual = (payload.len() / 8) as u64;
    if declared != actual {
        return Err(Error::ShapeMismatch {
            path: path.to_path_buf(),
            declared,
            actual,
        });
    }
    let shape = Shape::new(c as usize, h as usize, w as usize)?;
    let data = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
        .collect();
    LatentFeature::from_shape(shape, data)
}

pub fn save_tensor(f: &LatentFeature, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(f)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    file.sync_all().map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<LatentFeature> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, path)
}
