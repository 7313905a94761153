//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! magic "A2SM" | u32 version
//! config: u32 width, heads, layers, video_dim, text_dim, max_positions, max_segments
//!         f32 dropout | u8 alignment | 3 reserved zero bytes
//! u32 tensor count
//! per tensor: u32 name length | name (UTF-8) | u32 rows | u32 cols | u64 byte offset
//! data: f32 values, offsets relative to the start of this section
//! ```

use std::collections::HashMap;
use std::path::Path;

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"A2SM";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(cfg: &ModelConfig, params: &ModelParams<Tensor>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [cfg.width, cfg.heads, cfg.layers, cfg.video_dim, cfg.text_dim, cfg.max_positions, cfg.max_segments] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(cfg.dropout as f32).to_le_bytes());
    out.extend_from_slice(&[cfg.alignment as u8, 0, 0, 0]);

    let entries = params.entries();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, t) in &entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        out.extend_from_slice(&offset.to_le_bytes());
        offset += 4 * t.len() as u64;
    }
    for (_, t) in &entries {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(self.path, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn read_checkpoint(bytes: &[u8], path: &Path) -> Result<(ModelConfig, ModelParams<Tensor>)> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "bad magic, not a checkpoint"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    // Shortest decimal of the stored f32, so 0.1 comes back as 0.1.
    let dropout: f64 = r.f32()?.to_string().parse().expect("f32 display parses as f64");
    let flags = r.take(4)?;
    let cfg = ModelConfig {
        width: dims[0],
        heads: dims[1],
        layers: dims[2],
        video_dim: dims[3],
        text_dim: dims[4],
        max_positions: dims[5],
        max_segments: dims[6],
        dropout,
        alignment: flags[0] != 0,
    };
    cfg.validate().map_err(|e| Error::format(path, e.to_string()))?;

    let count = r.u32()? as usize;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let offset = r.u64()? as usize;
        manifest.push((name, rows, cols, offset));
    }
    let data = &bytes[r.pos..];
    let mut tensors = HashMap::new();
    for (name, rows, cols, offset) in manifest {
        let end = offset + 4 * rows * cols;
        let raw = data
            .get(offset..end)
            .ok_or_else(|| Error::format(path, format!("tensor {name} runs past end of file")))?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4")) as f64).collect();
        tensors.insert(name, Tensor::new(rows, cols, values)?);
    }

    let shapes = ModelParams::shapes(&cfg);
    let mut missing = None;
    let params = shapes.map(|name, &[rows, cols]| match tensors.remove(name) {
        Some(t) if t.shape() == [rows, cols] => t,
        _ => {
            missing.get_or_insert_with(|| name.to_string());
            Tensor::zeros(rows, cols)
        }
    });
    if let Some(name) = missing {
        return Err(Error::format(path, format!("tensor {name} missing or mis-shaped")));
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::format(path, format!("unexpected tensor {extra}")));
    }
    if !params.is_finite() {
        return Err(Error::format(path, "non-finite parameter values"));
    }
    Ok((cfg, params))
}

pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, params: &ModelParams<Tensor>) -> Result<()> {
    std::fs::write(path, write_checkpoint(cfg, params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams<Tensor>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes, path)
}
