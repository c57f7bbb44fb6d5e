//! File formats: CMPT binary tensors and binary PGM (P5) masks.
//!
//! CMPT layout, all integers little-endian:
//!
//! | bytes      | field                                  |
//! |------------|----------------------------------------|
//! | 4          | magic `b"CMPT"`                        |
//! | 2          | format version, `u16` = 1              |
//! | 1          | dtype code, `u8` = 1 (`f32`)           |
//! | 1          | ndim, `u8`                             |
//! | 4 * ndim   | dims, `u32` each                       |
//! | 4 * prod   | row-major IEEE-754 `f32` data          |

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{BinaryMask, Tensor};

pub const CMPT_MAGIC: &[u8; 4] = b"CMPT";
pub const CMPT_VERSION: u16 = 1;
pub const CMPT_DTYPE_F32: u8 = 1;

pub fn encode_tensor(t: &Tensor<f32>) -> Result<Vec<u8>> {
    let ndim = u8::try_from(t.dims().len())
        .map_err(|_| Error::format("ndim", format!("{} dimensions do not fit in u8", t.dims().len())))?;
    let mut out = Vec::with_capacity(8 + 4 * t.dims().len() + 4 * t.len());
    out.extend_from_slice(CMPT_MAGIC);
    out.extend_from_slice(&CMPT_VERSION.to_le_bytes());
    out.push(CMPT_DTYPE_F32);
    out.push(ndim);
    for &d in t.dims() {
        let d = u32::try_from(d).map_err(|_| Error::format("dims", format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.len() < 8 {
        return Err(Error::format("header", format!("{} bytes is shorter than the 8-byte preamble", bytes.len())));
    }
    if &bytes[0..4] != CMPT_MAGIC {
        return Err(Error::format("magic", format!("expected \"CMPT\", found {:?}", String::from_utf8_lossy(&bytes[0..4]))));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CMPT_VERSION {
        return Err(Error::format("version", format!("unsupported version {version}")));
    }
    if bytes[6] != CMPT_DTYPE_F32 {
        return Err(Error::format("dtype", format!("unsupported dtype code {}", bytes[6])));
    }
    let ndim = bytes[7] as usize;
    if ndim == 0 {
        return Err(Error::format("ndim", "ndim must be >= 1"));
    }
    let header = 8 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::format("dims", format!("header declares {ndim} dims but file has {} bytes", bytes.len())));
    }
    let dims: Vec<usize> = bytes[8..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    if dims.contains(&0) {
        return Err(Error::format("dims", format!("zero-sized dimension in {dims:?}")));
    }
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format("dims", format!("element count of {dims:?} overflows")))?;
    let body = &bytes[header..];
    if body.len() != expected * 4 {
        return Err(Error::LengthMismatch {
            expected,
            actual: body.len() / 4,
        });
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(dims, data)
}

pub fn write_tensor(t: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(t)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

pub fn encode_mask_pgm(m: &BinaryMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", m.width(), m.height()).into_bytes();
    out.extend(m.values().iter().map(|&v| if v == 1 { 255u8 } else { 0 }));
    out
}

/// Parses an 8-bit P5 PGM with maxval 255; pixels `>= 128` become 1.
pub fn decode_mask_pgm(bytes: &[u8]) -> Result<BinaryMask> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos).ok_or_else(|| Error::format("magic", "empty file"))?;
    if magic != b"P5" {
        return Err(Error::format("magic", format!("expected P5, found {:?}", String::from_utf8_lossy(magic))));
    }
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::format("maxval", format!("expected 255, found {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format("header", "missing whitespace before raster"));
    }
    pos += 1;
    let raster = &bytes[pos..];
    let expected = width * height;
    if raster.len() < expected {
        return Err(Error::LengthMismatch {
            expected,
            actual: raster.len(),
        });
    }
    BinaryMask::new(height, width, raster[..expected].iter().map(|&v| u8::from(v >= 128)).collect())
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, field: &'static str) -> Result<usize> {
    let tok = next_token(bytes, pos).ok_or_else(|| Error::format(field, "missing"))?;
    let n: usize = std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format(field, format!("not a number: {:?}", String::from_utf8_lossy(tok))))?;
    if n == 0 {
        return Err(Error::format(field, "must be positive"));
    }
    Ok(n)
}

pub fn write_mask_pgm(m: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_mask_pgm(m)).map_err(|e| Error::io(path, e))
}

pub fn read_mask_pgm(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mask_pgm(&bytes)
}
