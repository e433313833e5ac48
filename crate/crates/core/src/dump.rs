//! Binary tensor dump format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    4 bytes  "EFTN"
//! version  u32      1
//! rank     u32
//! extents  u64 x rank
//! dtype    u32      0 = f64
//! values   f64 x product(extents)
//! ```

use std::io::{Read, Write};

use thiserror::Error;

use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"EFTN";
pub const VERSION: u32 = 1;
pub const DTYPE_F64: u32 = 0;

/// Highest rank accepted when decoding; guards allocation on hostile input.
pub const MAX_RANK: u32 = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DumpError {
    #[error("truncated input: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u32),
    #[error("rank {0} exceeds limit")]
    RankTooLarge(u32),
    #[error("invalid extents {0:?}")]
    InvalidExtents(Vec<u64>),
    #[error("{0} trailing bytes after values")]
    TrailingBytes(usize),
}

impl From<DumpError> for crate::Error {
    fn from(e: DumpError) -> Self {
        crate::Error::Parse(e.to_string())
    }
}

pub fn encode(tensor: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * tensor.rank() + 8 * tensor.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
    for &e in tensor.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    out.extend_from_slice(&DTYPE_F64.to_le_bytes());
    for v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DumpError> {
        let available = self.bytes.len() - self.pos;
        if available < n {
            return Err(DumpError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DumpError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DumpError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decodes one tensor, rejecting trailing bytes.
pub fn decode(bytes: &[u8]) -> Result<Tensor, DumpError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
    if &magic != MAGIC {
        return Err(DumpError::BadMagic(magic));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(DumpError::UnsupportedVersion(version));
    }
    let rank = cur.u32()?;
    if rank > MAX_RANK {
        return Err(DumpError::RankTooLarge(rank));
    }
    let mut extents = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        extents.push(cur.u64()?);
    }
    let dtype = cur.u32()?;
    if dtype != DTYPE_F64 {
        return Err(DumpError::UnsupportedDtype(dtype));
    }
    let numel = extents
        .iter()
        .try_fold(1u64, |acc, &e| if e == 0 { None } else { acc.checked_mul(e) })
        .filter(|&n| n <= (usize::MAX / 8) as u64)
        .ok_or_else(|| DumpError::InvalidExtents(extents.clone()))? as usize;
    let raw = cur.take(numel * 8)?;
    let values = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let trailing = bytes.len() - cur.pos;
    if trailing != 0 {
        return Err(DumpError::TrailingBytes(trailing));
    }
    let shape: Vec<usize> = extents.iter().map(|&e| e as usize).collect();
    Ok(Tensor::new(&shape, values).expect("extents validated above"))
}

pub fn write_to(tensor: &Tensor, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(&encode(tensor))
}

pub fn read_from(r: &mut impl Read) -> crate::Result<Tensor> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    Ok(decode(&buf)?)
}
