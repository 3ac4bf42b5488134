//! Binary checkpoint format.
//!
//! ```text
//! magic      8 bytes  "SETRLCKP"
//! version    u32 LE
//! descriptor u32 LE length + UTF-8 bytes (architecture description)
//! count      u32 LE
//! per tensor:
//!   name     u32 LE length + UTF-8 bytes
//!   ndim     u32 LE, then ndim x u32 LE dims
//!   data     product(dims) x f32 LE
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{NnError, Result};
use crate::params::ParameterSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SETRLCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub descriptor: String,
    pub params: ParameterSet<f32>,
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_str(w: &mut impl Write, s: &str) -> Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_str(r: &mut impl Read) -> Result<String> {
    let n = get_u32(r)? as usize;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| NnError::Checkpoint(e.to_string()))
}

impl Checkpoint {
    pub fn new(descriptor: impl Into<String>, params: ParameterSet<f32>) -> Self {
        Self {
            descriptor: descriptor.into(),
            params,
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        put_u32(w, FORMAT_VERSION)?;
        put_str(w, &self.descriptor)?;
        put_u32(w, self.params.len() as u32)?;
        for (name, t) in self.params.iter() {
            put_str(w, name)?;
            put_u32(w, t.shape().len() as u32)?;
            for d in t.shape() {
                put_u32(w, *d as u32)?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let version = get_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let descriptor = get_str(r)?;
        let count = get_u32(r)?;
        let mut params = ParameterSet::new();
        for _ in 0..count {
            let name = get_str(r)?;
            let ndim = get_u32(r)? as usize;
            let shape = (0..ndim)
                .map(|_| get_u32(r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; n * 4];
            r.read_exact(&mut raw)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if params.get(&name).is_some() {
                return Err(NnError::Checkpoint(format!("duplicate tensor {name}")));
            }
            params.push(name, Tensor::new(shape, data)?);
        }
        Ok(Self { descriptor, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_magic() {
        let bytes = b"NOTACKPT\x01\x00\x00\x00".to_vec();
        assert!(Checkpoint::read_from(&mut bytes.as_slice()).is_err());
    }

    #[test]
    fn layout_is_stable() {
        let mut p = ParameterSet::new();
        p.push("w", Tensor::from_vec(vec![1.0f32]));
        let mut buf = Vec::new();
        Checkpoint::new("x", p).write_to(&mut buf).unwrap();
        let mut expected = b"SETRLCKP".to_vec();
        expected.extend([1, 0, 0, 0, 1, 0, 0, 0, b'x', 1, 0, 0, 0, 1, 0, 0, 0, b'w']);
        expected.extend([1, 0, 0, 0, 1, 0, 0, 0]);
        expected.extend(1.0f32.to_le_bytes());
        assert_eq!(buf, expected);
    }
}
