use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, RmnpModel};
use crate::dataset::NormStats;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RMNPCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    norm: NormStats,
}

/// Writes magic, version, a length-prefixed JSON header and every parameter
/// tensor in declaration order (`u16` name length, name, `u32` rows, `u32`
/// cols, little-endian `f64` values).
pub fn save_checkpoint(model: &RmnpModel, path: &Path) -> Result<()> {
    let header = serde_json::to_vec(&Header { config: model.config.clone(), norm: model.norm.clone() })
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let mut buf = Vec::with_capacity(model.params.numel() * 8 + header.len() + 64);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, value) in model.params.iter() {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(value.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(value.cols() as u32).to_le_bytes());
        for v in value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::load(self.path, 0, format!("truncated checkpoint at byte {}", self.pos)));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn bad(&self, msg: impl Into<String>) -> Error {
        Error::load(self.path, 0, msg)
    }
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<RmnpModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { path, bytes: &bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(r.bad("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.bad(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32()? as usize;
    let header: Header =
        serde_json::from_slice(r.take(len)?).map_err(|e| r.bad(format!("bad header: {e}")))?;
    let mut model = RmnpModel::new(header.config, header.norm)?;
    let count = r.u32()? as usize;
    if count != model.params.len() {
        return Err(r.bad(format!("{count} tensors but the model declares {}", model.params.len())));
    }
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| r.bad("tensor name is not UTF-8"))?;
        let expected = model.params.name(id);
        if name != expected {
            return Err(r.bad(format!("tensor '{name}' where '{expected}' was expected")));
        }
        let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
        let shape = model.params.value(id).shape();
        if (rows, cols) != shape {
            return Err(r.bad(format!("tensor '{name}' has shape {rows}x{cols}, expected {}x{}", shape.0, shape.1)));
        }
        let raw = r.take(rows * cols * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        *model.params.value_mut(id) = Matrix::from_vec(rows, cols, data);
    }
    if r.pos != bytes.len() {
        return Err(r.bad("trailing bytes after the last tensor"));
    }
    Ok(model)
}
