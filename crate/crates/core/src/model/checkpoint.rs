//! Binary checkpoint container.
//!
//! All integers are little-endian `u32`, all values little-endian `f64`.
//!
//! ```text
//! magic        8 bytes  "TAFNETCK"
//! version      u32      1
//! config_len   u32      byte length of the canonical config text
//! config       bytes    UTF-8, `TafnetConfig::to_canonical_text`
//! param_count  u32
//! per parameter, in declaration order:
//!   name_len   u32
//!   name       bytes    UTF-8
//!   shape      4 x u32  n, c, h, w
//!   values     n*c*h*w x f64
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::tensor::{Shape, Tensor4};

use super::{Tafnet, TafnetConfig, TafnetModel};

pub const MAGIC: &[u8; 8] = b"TAFNETCK";
pub const VERSION: u32 = 1;

pub fn encode(model: &TafnetModel) -> Vec<u8> {
    let cfg = model.cfg().to_canonical_text();
    let mut out = Vec::with_capacity(64 + cfg.len() + model.params.numel() * 8);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, cfg.len() as u32);
    out.extend_from_slice(cfg.as_bytes());
    put_u32(&mut out, model.params.len() as u32);
    for p in model.params.iter() {
        put_u32(&mut out, p.name.len() as u32);
        out.extend_from_slice(p.name.as_bytes());
        for d in p.value.shape().dims() {
            put_u32(&mut out, d as u32);
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn text(&mut self, n: usize) -> std::result::Result<&'a str, String> {
        std::str::from_utf8(self.bytes(n)?).map_err(|e| format!("invalid UTF-8: {e}"))
    }
}

/// Decodes a checkpoint and checks its parameters against the architecture
/// its config describes: same names, same order, same shapes.
pub fn decode(bytes: &[u8], path: &Path) -> Result<TafnetModel> {
    let fmt = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.bytes(8).map_err(fmt)? != MAGIC {
        return Err(fmt("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32().map_err(fmt)?;
    if version != VERSION {
        return Err(fmt(format!("unsupported version {version}")));
    }
    let len = r.u32().map_err(fmt)? as usize;
    let cfg = TafnetConfig::parse(r.text(len).map_err(fmt)?)?;
    let arch = Tafnet::new(cfg)?;
    let mut expected = ModelParams::new();
    arch.declare(&mut expected, 0)?;

    let count = r.u32().map_err(fmt)? as usize;
    if count != expected.len() {
        return Err(fmt(format!("{count} parameters, architecture has {}", expected.len())));
    }
    let mut params = ModelParams::new();
    for want in expected.iter() {
        let len = r.u32().map_err(fmt)? as usize;
        let name = r.text(len).map_err(fmt)?;
        if name != want.name {
            return Err(fmt(format!("expected parameter `{}`, found `{name}`", want.name)));
        }
        let mut d = [0usize; 4];
        for x in &mut d {
            *x = r.u32().map_err(fmt)? as usize;
        }
        let shape = Shape::new(d[0], d[1], d[2], d[3]);
        if shape != want.value.shape() {
            return Err(fmt(format!(
                "`{name}` has shape {shape}, expected {}",
                want.value.shape()
            )));
        }
        let raw = r.bytes(shape.len() * 8).map_err(fmt)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.insert(name, Tensor4::new(shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(fmt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(TafnetModel { arch, params })
}

pub fn save(model: &TafnetModel, path: &Path) -> Result<()> {
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<TafnetModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
