//! "FAFW" weight files.
//!
//! Layout (little-endian): magic `FAFW`, version `u16`, then until end of file
//! a sequence of records `name_len u16 | name utf-8 | rank u8 | dims u32[rank] | data f64[]`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FAFW";
pub const VERSION: u16 = 1;

/// Serialize named tensors in the given order.
pub fn encode<'a>(tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for (name, t) in tensors {
        let name_len = u16::try_from(name.len())
            .map_err(|_| TensorError::Contract(format!("tensor name too long: {name}")))?;
        let rank = u8::try_from(t.rank())
            .map_err(|_| TensorError::Contract(format!("rank too large for {name}")))?;
        buf.extend_from_slice(&name_len.to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d)
                .map_err(|_| TensorError::Contract(format!("dimension too large for {name}")))?;
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(TensorError::Format {
                offset: self.pos as u64,
                reason: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(TensorError::Format {
            offset: 0,
            reason: "bad magic, expected FAFW".into(),
        });
    }
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(TensorError::Format {
            offset: 4,
            reason: format!("unsupported version {version}"),
        });
    }
    let mut out = Vec::new();
    while c.pos < bytes.len() {
        let start = c.pos;
        let name_len = c.u16("name length")? as usize;
        let name = std::str::from_utf8(c.take(name_len, "name")?)
            .map_err(|_| TensorError::Format {
                offset: start as u64 + 2,
                reason: "tensor name is not utf-8".into(),
            })?
            .to_owned();
        let rank = c.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("dimension")? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = c.take(numel * 8, "tensor data")?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| TensorError::Format {
            offset: start as u64,
            reason: format!("tensor `{name}`: {e}"),
        })?;
        out.push((name, t));
    }
    Ok(out)
}

pub fn save_store(store: &ParamStore, path: &Path) -> Result<()> {
    let bytes = encode(store.iter().map(|(_, p)| (p.name.as_str(), &p.value)))?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// Overwrite the values of `store` from decoded tensors; names and shapes must match exactly.
pub fn load_into(store: &mut ParamStore, tensors: Vec<(String, Tensor)>) -> Result<()> {
    if tensors.len() != store.len() {
        return Err(TensorError::Contract(format!(
            "checkpoint has {} tensors, model expects {}",
            tensors.len(),
            store.len()
        )));
    }
    for (name, t) in tensors {
        let id = store
            .id(&name)
            .ok_or_else(|| TensorError::Contract(format!("unknown tensor `{name}` in checkpoint")))?;
        let p = store.get_mut(id);
        if p.value.shape() != t.shape() {
            return Err(TensorError::Contract(format!(
                "tensor `{name}` has shape {:?}, model expects {:?}",
                t.shape(),
                p.value.shape()
            )));
        }
        p.value = t;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_round_trip() {
        let bytes = encode(std::iter::empty()).unwrap();
        assert_eq!(bytes.len(), 6);
        assert!(decode(&bytes).unwrap().is_empty());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let t = Tensor::from_vec(vec![1.0, 2.0]);
        let bytes = encode([("w", &t)]).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(TensorError::Format { offset: 0, .. })));
        let err = decode(&bytes[..bytes.len() - 3]).unwrap_err();
        match err {
            TensorError::Format { offset, .. } => assert_eq!(offset, 6 + 2 + 1 + 1 + 4),
            e => panic!("unexpected {e}"),
        }
    }
}
