use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Leading bytes of every checkpoint file.
pub const CHECKPOINT_MAGIC: &[u8; 6] = b"SALAB1";

/// Named parameter tensors, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    tensors: BTreeMap<String, Tensor>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Serializes to the checkpoint layout: magic, then per parameter
    /// `u32` name length, name bytes, `u32` rank, `u32` dims, `f32` payload,
    /// all little-endian.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + self.num_scalars() * 4);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut magic = [0u8; 6];
        cur.read_exact(&mut magic)
            .map_err(|_| Error::Checkpoint("truncated header".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let mut params = Params::new();
        while !cur.is_empty() {
            let name_len = read_u32(&mut cur)? as usize;
            if cur.len() < name_len {
                return Err(Error::Checkpoint("truncated name".into()));
            }
            let name = std::str::from_utf8(&cur[..name_len])
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
                .to_string();
            cur = &cur[name_len..];
            let rank = read_u32(&mut cur)? as usize;
            let shape = (0..rank)
                .map(|_| read_u32(&mut cur).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            if cur.len() < n * 4 {
                return Err(Error::Checkpoint(format!("truncated payload for '{name}'")));
            }
            let data = cur[..n * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            cur = &cur[n * 4..];
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
            params.insert(name, t);
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_checkpoint_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }

    /// Rounds every value through `f32`, matching what a checkpoint stores.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        for (_, t) in out.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        out
    }
}

fn read_u32(cur: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    cur.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("unexpected end of file".into()))?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_bit_exact() {
        let mut p = Params::new();
        p.insert("b", Tensor::new(vec![2], vec![1.0, -2.0]).unwrap());
        let bytes = p.to_checkpoint_bytes();
        let mut expected = b"SALAB1".to_vec();
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(b"b");
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn rejects_corruption() {
        assert!(Params::from_checkpoint_bytes(b"SALAB2").is_err());
        let mut p = Params::new();
        p.insert("w", Tensor::new(vec![2, 2], vec![0.5; 4]).unwrap());
        let bytes = p.to_checkpoint_bytes();
        assert!(Params::from_checkpoint_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert_eq!(Params::from_checkpoint_bytes(&bytes).unwrap(), p);
    }
}
