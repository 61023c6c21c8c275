//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"TAGADCK1"
//! u64 config length, config JSON bytes
//! u64 tensor count
//! per tensor: u32 name length, name bytes, u64 rows, u64 cols, rows·cols f64
//! ```

use std::path::Path;

use crate::config::RunConfig;
use crate::encoders::{Model, ModelShape};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const MAGIC: &[u8; 8] = b"TAGADCK1";

pub fn encode(cfg: &RunConfig, model: &Model) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + model.parameter_count() * 8);
    out.extend_from_slice(MAGIC);
    let json = cfg.to_json();
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(json.as_bytes());
    out.extend_from_slice(&(model.tensors().len() as u64).to_le_bytes());
    for (name, t) in model.names().iter().zip(model.tensors()) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
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
        match end {
            Some(e) => {
                let s = &self.buf[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(Error::validation("checkpoint truncated")),
        }
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::validation("checkpoint length overflow"))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(RunConfig, Model)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::validation("not a model checkpoint (bad magic)"));
    }
    let json_len = r.len()?;
    let json = std::str::from_utf8(r.take(json_len)?)
        .map_err(|_| Error::validation("checkpoint config is not UTF-8"))?;
    let cfg = RunConfig::from_json(json)?;
    let shape = ModelShape::from_config(&cfg);
    let expected = Model::init(shape, 0);
    let count = r.len()?;
    if count != expected.tensors().len() {
        return Err(Error::validation(format!(
            "checkpoint has {count} tensors, config implies {}",
            expected.tensors().len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for want in expected.names() {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::validation("tensor name is not UTF-8"))?;
        if name != want {
            return Err(Error::validation(format!("expected tensor {want}, found {name}")));
        }
        let (rows, cols) = (r.len()?, r.len()?);
        let bytes = r.take(rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).ok_or_else(|| {
            Error::validation("tensor size overflow")
        })?)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Matrix::from_vec(rows, cols, data));
    }
    if r.pos != bytes.len() {
        return Err(Error::validation("trailing bytes after checkpoint"));
    }
    let model = Model::from_tensors(shape, tensors).map_err(Error::Validation)?;
    Ok((cfg, model))
}

pub fn save(path: &Path, cfg: &RunConfig, model: &Model) -> Result<()> {
    std::fs::write(path, encode(cfg, model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(RunConfig, Model)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
