//! The `MRST` raster container.
//!
//! Layout, little-endian throughout:
//!
//! | bytes | field |
//! |-------|-------|
//! | 0..4  | magic `MRST` |
//! | 4..6  | version, u16 = 1 |
//! | 6     | dtype: 0 = f32, 1 = u8 |
//! | 7     | reserved, 0 |
//! | 8..20 | c, h, w as u32 |
//! | 20..  | payload, channel then row then column |
//! | last 4 | CRC-32 of the payload |

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

pub const MAGIC: &[u8; 4] = b"MRST";
pub const VERSION: u16 = 1;
const HEADER: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub enum RasterData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl RasterData {
    fn code(&self) -> u8 {
        match self {
            RasterData::F32(_) => 0,
            RasterData::U8(_) => 1,
        }
    }

    fn len(&self) -> usize {
        match self {
            RasterData::F32(v) => v.len(),
            RasterData::U8(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: RasterData,
}

impl Raster {
    pub fn new(c: usize, h: usize, w: usize, data: RasterData) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(Error::Shape(format!("{} values for a {c}x{h}x{w} raster", data.len())));
        }
        Ok(Raster { c, h, w, data })
    }

    /// The first sample of `t`.
    pub fn from_tensor(t: &Tensor4<f32>) -> Self {
        let s = t.shape();
        Raster {
            c: s.c,
            h: s.h,
            w: s.w,
            data: RasterData::F32(t.sample(0).to_vec()),
        }
    }

    pub fn labels(h: usize, w: usize, labels: Vec<u8>) -> Result<Self> {
        Raster::new(1, h, w, RasterData::U8(labels))
    }

    pub fn to_tensor(&self) -> Result<Tensor4<f32>> {
        match &self.data {
            RasterData::F32(v) => Tensor4::from_vec(Shape4::new(1, self.c, self.h, self.w)?, v.clone()),
            RasterData::U8(_) => Err(Error::Format("expected an f32 raster, found u8".into())),
        }
    }

    pub fn into_u8(self) -> Result<Vec<u8>> {
        match self.data {
            RasterData::U8(v) => Ok(v),
            RasterData::F32(_) => Err(Error::Format("expected a u8 raster, found f32".into())),
        }
    }
}

pub fn encode(r: &Raster) -> Vec<u8> {
    let payload: Vec<u8> = match &r.data {
        RasterData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        RasterData::U8(v) => v.clone(),
    };
    let mut out = Vec::with_capacity(HEADER + payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(r.data.code());
    out.push(0);
    for d in [r.c, r.h, r.w] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out
}

fn take<'a>(bytes: &'a [u8], offset: usize, n: usize) -> Result<&'a [u8]> {
    bytes.get(offset..offset + n).ok_or(Error::Truncated {
        offset,
        needed: n,
        available: bytes.len().saturating_sub(offset),
    })
}

fn u32_at(bytes: &[u8], offset: usize) -> Result<usize> {
    Ok(u32::from_le_bytes(take(bytes, offset, 4)?.try_into().unwrap()) as usize)
}

pub fn decode(bytes: &[u8]) -> Result<Raster> {
    if take(bytes, 0, 4)? != MAGIC {
        return Err(Error::Format("bad magic, not an MRST container".into()));
    }
    let version = u16::from_le_bytes(take(bytes, 4, 2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let head = take(bytes, 6, 2)?;
    let (code, reserved) = (head[0], head[1]);
    if reserved != 0 {
        return Err(Error::Format(format!("reserved byte is {reserved}, expected 0")));
    }
    let (c, h, w) = (u32_at(bytes, 8)?, u32_at(bytes, 12)?, u32_at(bytes, 16)?);
    let elem = match code {
        0 => 4,
        1 => 1,
        _ => return Err(Error::Format(format!("unknown dtype code {code}"))),
    };
    let n = c
        .checked_mul(h)
        .and_then(|x| x.checked_mul(w))
        .and_then(|x| x.checked_mul(elem))
        .ok_or_else(|| Error::Format(format!("dimensions {c}x{h}x{w} overflow")))?;
    let payload = take(bytes, HEADER, n)?;
    let stored = u32::from_le_bytes(take(bytes, HEADER + n, 4)?.try_into().unwrap());
    if bytes.len() != HEADER + n + 4 {
        return Err(Error::Format(format!(
            "{} trailing bytes after the checksum",
            bytes.len() - HEADER - n - 4
        )));
    }
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Crc { stored, computed });
    }
    let data = match code {
        0 => RasterData::F32(
            payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        ),
        _ => RasterData::U8(payload.to_vec()),
    };
    Ok(Raster { c, h, w, data })
}

/// Writes to a temporary file beside `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn save_raster(path: &Path, r: &Raster) -> Result<()> {
    write_atomic(path, &encode(r))
}

pub fn load_raster(path: &Path) -> Result<Raster> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
