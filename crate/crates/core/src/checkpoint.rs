//! `QHD1` parameter checkpoints.
//!
//! ```text
//! b"QHD1"
//! u32 version (= 1)
//! u32 tensor count
//! per tensor: u32 name length, UTF-8 name, u32 rank, rank x u32 dims
//! then every tensor's values as f64, in header order
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"QHD1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            name: name.into(),
            shape,
            data,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<Tensor>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = CHECKPOINT_MAGIC.to_vec();
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
        }
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Format { offset: 0, message: "bad magic, expected \"QHD1\"".into() });
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format { offset: 4, message: format!("unsupported version {version}") });
        }
        let count = r.u32("tensor count")? as usize;
        let mut headers = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32("name length")? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| Error::Format { offset: at as u64, message: "tensor name is not UTF-8".into() })?
                .to_string();
            let rank = r.u32("rank")? as usize;
            let shape = (0..rank).map(|_| r.u32("dim").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            headers.push((name, shape));
        }
        let mut tensors = Vec::with_capacity(count);
        for (name, shape) in headers {
            let n: usize = shape.iter().product();
            let raw = r.take(n * 8, "tensor data")?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push(Tensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos as u64,
                message: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip(values in proptest::collection::vec(any::<f64>(), 0..40), split in 0usize..40) {
            let split = split.min(values.len());
            let ckpt = Checkpoint { tensors: vec![
                Tensor::new("a", vec![split], values[..split].to_vec()),
                Tensor::new("theta_q", vec![1, values.len() - split], values[split..].to_vec()),
            ]};
            let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
            prop_assert_eq!(back.tensors.len(), 2);
            for (a, b) in back.tensors.iter().zip(&ckpt.tensors) {
                prop_assert_eq!(&a.name, &b.name);
                prop_assert_eq!(&a.shape, &b.shape);
                prop_assert_eq!(a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                                b.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn rejects_damage() {
        let ckpt = Checkpoint { tensors: vec![Tensor::new("w", vec![2], vec![1.0, 2.0])] };
        let bytes = ckpt.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[3] = b'2';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }
}
