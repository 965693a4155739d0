//! Binary checkpoint format: magic `RLLR`, format version, config block,
//! vocabulary fingerprint, role tag, parameter count, then the parameters as
//! little-endian f64 in canonical order. All integers are little-endian.

use std::path::Path;

use super::config::{HeadSet, ModelConfig};
use super::model::{ModelCheckpoint, Role};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RLLR";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode(ckpt: &ModelCheckpoint) -> Vec<u8> {
    let c = &ckpt.config;
    let mut out = Vec::with_capacity(48 + 8 * ckpt.params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [c.vocab_size, c.context_length, c.width, c.layers, c.heads] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(c.head_set.bits());
    out.extend_from_slice(&ckpt.vocab_fingerprint.to_le_bytes());
    out.push(ckpt.role.tag());
    out.extend_from_slice(&(ckpt.params.len() as u64).to_le_bytes());
    for p in &ckpt.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self.buf.get(self.at..self.at + n).ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        self.at += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(buf: &[u8]) -> Result<ModelCheckpoint> {
    let mut r = Reader { buf, at: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let heads = r.u8()?;
    let head_set = HeadSet::from_bits(heads).ok_or_else(|| Error::Checkpoint(format!("bad head flags {heads}")))?;
    let config = ModelConfig {
        vocab_size: dims[0],
        context_length: dims[1],
        width: dims[2],
        layers: dims[3],
        heads: dims[4],
        head_set,
    };
    let fingerprint = r.u64()?;
    let tag = r.u8()?;
    let role = Role::from_tag(tag).ok_or_else(|| Error::Checkpoint(format!("bad role tag {tag}")))?;
    let n = r.u64()? as usize;
    if n != config.param_count() {
        return Err(Error::Checkpoint(format!("config implies {} parameters, header says {n}", config.param_count())));
    }
    let bytes = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("parameter count overflow".into()))?)?;
    if r.at != buf.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    let params = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    ModelCheckpoint::from_parts(config, role, fingerprint, params)
}

pub fn save(ckpt: &ModelCheckpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, encode(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelCheckpoint> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}
