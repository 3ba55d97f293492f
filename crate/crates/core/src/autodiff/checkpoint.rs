//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DUET"  u32 version  u32 tensor_count
//! per tensor: u16 name_len, name (UTF-8), u8 rank, rank x u32 dims,
//!             numel x f32 data
//! metadata:   u64 seed, u16 digest_len, digest bytes
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{AutodiffError, ParamSet, Tensor};

pub const MAGIC: &[u8; 4] = b"DUET";
pub const FORMAT_VERSION: u32 = 1;

/// Trailing metadata block.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CheckpointMeta {
    pub seed: u64,
    /// SHA-256 of the serialized configuration that produced the parameters.
    pub config_digest: Vec<u8>,
}

impl CheckpointMeta {
    pub fn new(seed: u64, config_text: &str) -> Self {
        CheckpointMeta {
            seed,
            config_digest: Sha256::digest(config_text.as_bytes()).to_vec(),
        }
    }
}

pub fn encode(params: &ParamSet<f32>, meta: &CheckpointMeta) -> Result<Vec<u8>, AutodiffError> {
    let mut out = Vec::with_capacity(16 + params.numel() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        let name_len = u16::try_from(name.len())
            .map_err(|_| AutodiffError::Checkpoint(format!("name too long: {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&meta.seed.to_le_bytes());
    out.extend_from_slice(&(meta.config_digest.len() as u16).to_le_bytes());
    out.extend_from_slice(&meta.config_digest);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], AutodiffError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end
            .ok_or_else(|| AutodiffError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, AutodiffError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, AutodiffError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, AutodiffError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, AutodiffError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(ParamSet<f32>, CheckpointMeta), AutodiffError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(AutodiffError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(AutodiffError::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let count = r.u32()?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| AutodiffError::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(
            numel
                .checked_mul(4)
                .ok_or_else(|| AutodiffError::Checkpoint(format!("tensor {name} too large")))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.insert(name, Tensor::from_vec(shape, data)?);
    }
    let seed = r.u64()?;
    let digest_len = r.u16()? as usize;
    let config_digest = r.take(digest_len)?.to_vec();
    if r.pos != bytes.len() {
        return Err(AutodiffError::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok((
        params,
        CheckpointMeta {
            seed,
            config_digest,
        },
    ))
}

pub fn save(
    path: &Path,
    params: &ParamSet<f32>,
    meta: &CheckpointMeta,
) -> Result<(), AutodiffError> {
    let bytes = encode(params, meta)?;
    fs::write(path, bytes)
        .map_err(|e| AutodiffError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<(ParamSet<f32>, CheckpointMeta), AutodiffError> {
    let bytes = fs::read(path)
        .map_err(|e| AutodiffError::Checkpoint(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}
