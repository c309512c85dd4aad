//! Binary checkpoint codec.
//!
//! Layout (little-endian): `"ADEC"`, format version `u32`, tensor count `u32`;
//! per tensor: name length `u32`, name bytes, rank `u32`, extents `u64`×rank,
//! `f64` payload; then a `u32`-length UTF-8 text block; finally the CRC32 of
//! every byte after the version field.

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ADEC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckpointFile {
    pub tensors: Vec<NamedArray>,
    pub text: String,
}

impl CheckpointFile {
    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for e in &t.shape {
                out.extend_from_slice(&(*e as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.text.len() as u32).to_le_bytes());
        out.extend_from_slice(self.text.as_bytes());
        let crc = crc32fast::hash(&out[8..]);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let body = &bytes[..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        if crc32fast::hash(&body[8..]) != stored {
            return Err(Error::Checkpoint("CRC mismatch: checkpoint is corrupt".into()));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(NamedArray { name, shape, data });
        }
        let len = r.u32()? as usize;
        let text = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("text block is not UTF-8".into()))?;
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes before CRC".into()));
        }
        Ok(CheckpointFile { tensors, text })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CheckpointFile {
        CheckpointFile {
            tensors: vec![
                NamedArray {
                    name: "encoder.l0.w".into(),
                    shape: vec![2, 3],
                    data: vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE, 0.0, -0.0],
                },
                NamedArray {
                    name: "centroids".into(),
                    shape: vec![1],
                    data: vec![7.0],
                },
            ],
            text: "iter = 3\n".into(),
        }
    }

    #[test]
    fn encode_decode_encode_is_stable() {
        let bytes = sample().encode();
        assert_eq!(&bytes[..4], b"ADEC");
        let back = CheckpointFile::decode(&bytes).unwrap();
        assert_eq!(back.encode(), bytes);
        assert_eq!(back.get("centroids").unwrap().data, vec![7.0]);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = sample().encode();
        bytes[20] ^= 1;
        assert!(matches!(CheckpointFile::decode(&bytes), Err(Error::Checkpoint(_))));
        let bytes = sample().encode();
        assert!(CheckpointFile::decode(&bytes[..bytes.len() - 9]).is_err());
        assert!(CheckpointFile::decode(b"NOPE0000000000000000").is_err());
    }
}
