//! Binary checkpoint format:
//!
//! ```text
//! "CSTK" | u32 version=1 | u32 count
//! per tensor: u32 name_len | name (UTF-8) | u32 ndim | u32 dims[ndim] | u8 dtype (0 = f32) | f32 payload
//! ```
//! All integers and floats little-endian, payload row-major.

use std::fs;
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{format_err, Result};

const MAGIC: &[u8; 4] = b"CSTK";
const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

pub fn encode(store: &ParamStore<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.dims().len() as u32).to_le_bytes());
        for &d in t.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(DTYPE_F32);
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format_err!("checkpoint truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamStore<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(format_err!("bad checkpoint magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format_err!("unsupported checkpoint version {version}"));
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| format_err!("tensor name is not UTF-8"))?
            .to_string();
        let ndim = r.u32()? as usize;
        let mut dims = Vec::with_capacity(ndim.min(16));
        let mut numel: usize = 1;
        for _ in 0..ndim {
            let d = r.u32()? as usize;
            numel = numel.checked_mul(d).ok_or_else(|| format_err!("dims overflow"))?;
            dims.push(d);
        }
        let dtype = r.take(1)?[0];
        if dtype != DTYPE_F32 {
            return Err(format_err!("unsupported dtype {dtype}"));
        }
        let bytes = numel.checked_mul(4).ok_or_else(|| format_err!("dims overflow"))?;
        let payload = r.take(bytes)?;
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::new(dims, data).map_err(|e| format_err!("tensor {name:?}: {e}"))?;
        store.add(&name, t).map_err(|e| format_err!("{e}"))?;
    }
    if r.pos != bytes.len() {
        return Err(format_err!("{} trailing bytes after checkpoint", bytes.len() - r.pos));
    }
    Ok(store)
}

pub fn save(store: &ParamStore<f32>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(store))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamStore<f32>> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn sample() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("enc.w", Tensor::matrix(2, 3, vec![1.0, -2.0, 3.5, 0.0, 1e-7, -0.0]).unwrap()).unwrap();
        s.add("b", Tensor::new(vec![1], vec![42.0]).unwrap()).unwrap();
        s
    }

    #[test]
    fn layout_is_bit_exact() {
        let bytes = encode(&sample());
        assert_eq!(&bytes[..4], b"CSTK");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &5u32.to_le_bytes());
        assert_eq!(&bytes[16..21], b"enc.w");
        assert_eq!(&bytes[21..25], &2u32.to_le_bytes());
        assert_eq!(&bytes[25..29], &2u32.to_le_bytes());
        assert_eq!(&bytes[29..33], &3u32.to_le_bytes());
        assert_eq!(bytes[33], 0);
        assert_eq!(&bytes[34..38], &1.0f32.to_le_bytes());
        let back = decode(&bytes).unwrap();
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let bytes = encode(&sample());
        assert!(matches!(decode(&[]), Err(Error::Format(_))));
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[33] = 1;
        assert!(matches!(decode(&bad), Err(Error::Format(_))));
    }
}
