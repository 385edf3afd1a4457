use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError, ModelParams, Result};
use crate::protein::{NormalizationStats, DESCRIPTOR_NAMES};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"DTACKPT\0";
const VERSION: u32 = 1;

/// Descriptors replaced by zero after normalisation, in descriptor order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptorMask(pub [bool; 4]);

impl DescriptorMask {
    pub const NONE: DescriptorMask = DescriptorMask([false; 4]);

    pub fn apply(&self, v: [f64; 4]) -> [f64; 4] {
        let mut out = v;
        for (x, &masked) in out.iter_mut().zip(&self.0) {
            if masked {
                *x = 0.0;
            }
        }
        out
    }

    /// Parses names such as `rmsf,gyr`; accepts `rmsf gyr se mm` or the full
    /// descriptor column names.
    pub fn parse(list: &str) -> std::result::Result<Self, String> {
        let mut mask = [false; 4];
        for item in list.split([',', '+']).map(str::trim).filter(|s| !s.is_empty()) {
            let lower = item.to_ascii_lowercase();
            let i = match lower.as_str() {
                "rmsf" => 0,
                "gyr" => 1,
                "se" => 2,
                "mm" => 3,
                other => DESCRIPTOR_NAMES
                    .iter()
                    .position(|n| *n == other)
                    .ok_or_else(|| format!("unknown descriptor {item:?}"))?,
            };
            mask[i] = true;
        }
        Ok(Self(mask))
    }
}

/// Everything besides the weights needed to reuse a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub normalization: Option<NormalizationStats>,
    #[serde(default)]
    pub descriptor_mask: DescriptorMask,
}

/// Layout, little-endian throughout:
///
/// ```text
/// magic    8 bytes "DTACKPT\0"
/// version  u32
/// meta     u32 byte length + TOML text
/// count    u32
/// count × tensor:
///   name   u32 byte length + UTF-8
///   rank   u32, then rank × u64 extents
///   values f64 × product(extents), row-major
/// ```
pub fn write_checkpoint<W: Write>(meta: &CheckpointMeta, model: &Model, mut out: W) -> Result<()> {
    if meta.model != *model.config() {
        return Err(ModelError::Checkpoint("meta config differs from model config".into()));
    }
    let text = toml::to_string(meta).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    write_bytes(&mut out, text.as_bytes())?;
    let params = model.params();
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.names().iter().zip(params.tensors()) {
        write_bytes(&mut out, name.as_bytes())?;
        out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &e in t.shape() {
            out.write_all(&(e as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.numel() * 8);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

fn write_bytes<W: Write>(out: &mut W, bytes: &[u8]) -> Result<()> {
    out.write_all(&(bytes.len() as u32).to_le_bytes())?;
    out.write_all(bytes)?;
    Ok(())
}

fn truncated(_: std::io::Error) -> ModelError {
    ModelError::Checkpoint("truncated file".into())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(truncated)?;
    String::from_utf8(buf).map_err(|_| ModelError::Checkpoint("invalid UTF-8".into()))
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<(CheckpointMeta, Model)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(ModelError::Checkpoint("not a checkpoint file".into()));
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let meta: CheckpointMeta =
        toml::from_str(&read_string(&mut input)?).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let count = read_u32(&mut input)? as usize;
    let mut named = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name = read_string(&mut input)?;
        let rank = read_u32(&mut input)? as usize;
        if rank > 8 {
            return Err(ModelError::Checkpoint(format!("{name}: rank {rank} too large")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            input.read_exact(&mut b).map_err(truncated)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut bytes = vec![0u8; numel * 8];
        input.read_exact(&mut bytes).map_err(truncated)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        named.push((name, Tensor::new(shape, data)?));
    }
    let params = ModelParams::from_named(&meta.model, named)?;
    let model = Model::from_parts(meta.model.clone(), params)?;
    Ok((meta, model))
}
