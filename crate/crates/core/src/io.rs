//! The V3D container.
//!
//! Layout, all little-endian:
//!
//! | bytes | content                                   |
//! |-------|-------------------------------------------|
//! | 4     | magic `V3D1`                              |
//! | 12    | `u32` nx, ny, nz                          |
//! | 12    | `f32` sx, sy, sz (millimetres)            |
//! | 1     | dtype tag: `0` = `f32`, `1` = `u8`        |
//! | ...   | nx·ny·nz payload elements, x fastest      |
//!
//! Readers promote the payload to `f64`. The `u8` payload is only written
//! for volumes whose values are all `0` or `1`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::{voxel_count, BinaryMask, Spacing, Volume3};

pub const MAGIC: &[u8; 4] = b"V3D1";
const HEADER_LEN: usize = 4 + 12 + 12 + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    U8 = 1,
}

impl Dtype {
    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::U8),
            other => Err(Error::WrongFormat(format!("unknown dtype tag {other}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }
}

pub fn encode(v: &Volume3, dtype: Dtype) -> Result<Vec<u8>> {
    let dims = v.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + v.len() * dtype.width());
    out.extend_from_slice(MAGIC);
    for d in dims {
        let d = u32::try_from(d)
            .map_err(|_| Error::InvalidVolume(format!("dimension {d} does not fit in u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for s in v.spacing().0 {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.push(dtype as u8);
    match dtype {
        Dtype::F32 => {
            for &x in v.data() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        Dtype::U8 => {
            for (i, &x) in v.data().iter().enumerate() {
                let b = if x == 0.0 {
                    0u8
                } else if x == 1.0 {
                    1u8
                } else {
                    return Err(Error::InvalidVolume(format!(
                        "u8 payload requires binary values, voxel {i} is {x}"
                    )));
                };
                out.push(b);
            }
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Volume3> {
    if bytes.len() < 4 {
        return Err(Error::CorruptFile(format!(
            "{} bytes is shorter than the magic",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::WrongFormat(format!(
            "magic {:?} is not V3D1",
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::CorruptFile("truncated header".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let dims = [u32_at(4), u32_at(8), u32_at(12)];
    let spacing = Spacing([f32_at(16), f32_at(20), f32_at(24)]);
    let dtype = Dtype::from_tag(bytes[28])?;
    let payload = &bytes[HEADER_LEN..];
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::CorruptFile(format!("dimensions {dims:?} overflow")))?;
    if payload.len() != n * dtype.width() {
        return Err(Error::CorruptFile(format!(
            "payload has {} bytes, dimensions {dims:?} need {}",
            payload.len(),
            n * dtype.width()
        )));
    }
    debug_assert_eq!(n, voxel_count(dims));
    let data = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::U8 => payload
            .iter()
            .map(|&b| match b {
                0 => Ok(0.0),
                1 => Ok(1.0),
                other => Err(Error::CorruptFile(format!("u8 payload value {other}"))),
            })
            .collect::<Result<Vec<f64>>>()?,
    };
    Volume3::new(dims, spacing, data).map_err(|e| Error::CorruptFile(e.to_string()))
}

pub fn write_volume(path: impl AsRef<Path>, v: &Volume3, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(v, dtype)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Writes a mask with the compact `u8` payload.
pub fn write_mask(path: impl AsRef<Path>, m: &BinaryMask) -> Result<()> {
    write_volume(path, m.as_volume(), Dtype::U8)
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume3> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
