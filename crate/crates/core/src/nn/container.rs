//! Binary weight container.
//!
//! ```text
//! "PWNN" | u32 version | u32 meta_len | meta (JSON)
//! u32 count | count x { u16 name_len | name | 4 x u32 shape | u64 offset }
//! f64 data, little endian; offsets count values from the start of the data block
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PWNN";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct WeightFile {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl WeightFile {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let meta = serde_json::to_vec(&self.meta)?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(&meta)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            let bytes = name.as_bytes();
            if bytes.len() > u16::MAX as usize {
                return Err(Error::Config(format!("tensor name too long: {name}")));
            }
            w.write_all(&(bytes.len() as u16).to_le_bytes())?;
            w.write_all(bytes)?;
            for d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            w.write_all(&offset.to_le_bytes())?;
            offset += t.len() as u64;
        }
        for (_, t) in &self.tensors {
            let mut buf = Vec::with_capacity(t.len() * 8);
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut all = Vec::new();
        r.read_to_end(&mut all)?;
        let mut cur = Cursor { buf: &all, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Bitstream("not a PWNN weight file".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Bitstream(format!("unsupported weight file version {version}")));
        }
        let meta_len = cur.u32()? as usize;
        let meta: serde_json::Value = serde_json::from_slice(cur.take(meta_len)?)?;
        let count = cur.u32()? as usize;
        let mut manifest = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = cur.u16()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| Error::Bitstream("tensor name is not UTF-8".into()))?;
            let mut shape = [0usize; 4];
            for d in &mut shape {
                *d = cur.u32()? as usize;
            }
            let offset = cur.u64()? as usize;
            manifest.push((name, shape, offset));
        }
        let data = &all[cur.pos..];
        let mut tensors = Vec::with_capacity(manifest.len());
        for (name, shape, offset) in manifest {
            let len: usize = shape.iter().product();
            let start = offset.checked_mul(8).ok_or(Error::Truncated)?;
            let end = start.checked_add(len * 8).ok_or(Error::Truncated)?;
            let bytes = data.get(start..end).ok_or(Error::Truncated)?;
            let values = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((name, Tensor::from_vec(shape, values)?));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        Self::read_from(&mut f)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos + n).ok_or(Error::Truncated)?;
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
