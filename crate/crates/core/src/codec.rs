//! Framing shared by the binary file formats:
//! 4 magic bytes, `u32` LE version, `u32` LE header length, a JSON header,
//! then a raw little-endian payload whose layout the header describes.

use std::io::Write;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub(crate) fn write_header<W: Write, H: Serialize>(out: &mut W, magic: &[u8; 4], header: &H) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    out.write_all(magic)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;
    Ok(())
}

pub(crate) fn write_f64s<W: Write>(out: &mut W, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub(crate) fn write_f32s<W: Write>(out: &mut W, values: impl Iterator<Item = f32>) -> Result<()> {
    let mut buf = Vec::new();
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Cursor over an in-memory file that reports failures with byte offsets.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Validates magic and version and decodes the JSON header.
    pub fn open<H: DeserializeOwned>(bytes: &'a [u8], magic: &[u8; 4]) -> Result<(Self, H)> {
        let mut r = Reader { bytes, pos: 0 };
        let m = r.take(4)?;
        if m != magic {
            return Err(Error::Parse {
                offset: 0,
                msg: format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(m),
                    String::from_utf8_lossy(magic)
                ),
            });
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Parse {
                offset: 4,
                msg: format!("unsupported version {version}"),
            });
        }
        let len = r.u32()? as usize;
        let start = r.pos;
        let raw = r.take(len)?;
        let header = serde_json::from_slice(raw).map_err(|e| Error::Parse {
            offset: start as u64,
            msg: format!("invalid header: {e}"),
        })?;
        Ok((r, header))
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Parse {
                offset: self.pos as u64,
                msg: format!(
                    "unexpected end of file: needed {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            }),
        }
    }

    pub fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.overflow())?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| self.overflow())?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn overflow(&self) -> Error {
        Error::Parse {
            offset: self.pos as u64,
            msg: "declared size overflows".into(),
        }
    }

    /// Errors if unread bytes remain.
    pub fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Parse {
                offset: self.pos as u64,
                msg: format!("{} trailing bytes", self.bytes.len() - self.pos),
            });
        }
        Ok(())
    }
}
