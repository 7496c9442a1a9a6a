//! `ADN1` weight container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    b"ADN1"
//! version  u32            currently 1
//! count    u32            number of entries
//! manifest count × {
//!     name_len u32, name [u8; name_len] (UTF-8),
//!     dtype u8 (0 = f32, 1 = f64),
//!     rank u32, dims [u64; rank],
//!     offset u64           byte offset of the array within the data section
//! }
//! data     raw little-endian arrays in manifest order
//! ```
//!
//! Saving always writes `f64`; loading accepts both dtypes.

use std::fs;
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ADN1";
pub const VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

/// Ordered named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F64);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 8 * t.numel() as u64;
        }
        for (_, t) in &self.entries {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("missing ADN1 magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut manifest = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("entry name is not UTF-8".into()))?
                .to_string();
            let dtype = r.take(1)?[0];
            let width = match dtype {
                DTYPE_F32 => 4,
                DTYPE_F64 => 8,
                other => return Err(Error::Format(format!("unknown dtype {other} for `{name}`"))),
            };
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let offset = r.u64()? as usize;
            manifest.push((name, dtype, width, shape, offset));
        }
        let data = &bytes[r.pos..];
        let mut entries = Vec::with_capacity(manifest.len());
        let mut expected = 0usize;
        for (name, dtype, width, shape, offset) in manifest {
            let numel: usize = shape.iter().product();
            if offset != expected {
                return Err(Error::Format(format!("`{name}` has offset {offset}, expected {expected}")));
            }
            let end = offset + numel * width;
            let raw = data
                .get(offset..end)
                .ok_or_else(|| Error::Format(format!("`{name}` runs past the end of the file")))?;
            let values: Vec<f64> = if dtype == DTYPE_F64 {
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect()
            } else {
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect()
            };
            let tensor = Tensor::new(&shape, values)
                .map_err(|e| Error::Format(format!("`{name}`: {e}")))?;
            entries.push((name, tensor));
            expected = end;
        }
        if expected != data.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after the last array",
                data.len() - expected
            )));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let out = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Format("truncated manifest".into()))?;
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push("encoder.stage1.conv_a.kernel", Tensor::from_fn(&[3, 3, 1, 2], |i| i as f64 * 0.25 - 1.0));
        ck.push("encoder.stage1.bn_a.gamma", Tensor::new(&[2], vec![1.0, -0.0]).unwrap());
        ck.push("step", Tensor::scalar(f64::MIN_POSITIVE));
        ck
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"ADN1");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.get("step").unwrap().item(), f64::MIN_POSITIVE);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(Checkpoint::from_bytes(&magic).is_err());
    }

    #[test]
    fn reads_single_precision_arrays() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.push(b'w');
        bytes.push(DTYPE_F32);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&0u64.to_le_bytes());
        bytes.extend_from_slice(&1.5f32.to_le_bytes());
        bytes.extend_from_slice(&(-2.0f32).to_le_bytes());
        let ck = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(ck.get("w").unwrap().data(), &[1.5, -2.0]);
    }
}
