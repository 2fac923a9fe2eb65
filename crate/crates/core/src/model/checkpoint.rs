//! Binary model checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! magic   b"SDVM"
//! version u16 (1)
//! config  image_height u32, image_width u32, patch_size u32, embed_dim u32,
//!         depth u32, n_heads u32, linformer_k u32, mlp_dim u32,
//!         n_channels u32, head u8 (0 = Classify4, 1 = Regress2),
//!         dropout_rate f32
//! tensors in ModelParams::tensors order, each: rank u8, dims u32 x rank,
//!         f32 payload (row-major)
//! ```
//!
//! Parameters are narrowed to f32 on save.

use std::path::Path;

use super::{HeadKind, ModelConfig, ModelParams};
use crate::data_io::write_atomic;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"SDVM";
pub const VERSION: u16 = 1;

pub fn encode(config: &ModelConfig, params: &ModelParams) -> Result<Vec<u8>> {
    params.check_shapes(config)?;
    let mut buf = Vec::with_capacity(64 + 4 * params.count());
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        config.image_height,
        config.image_width,
        config.patch_size,
        config.embed_dim,
        config.depth,
        config.n_heads,
        config.linformer_k,
        config.mlp_dim,
        config.n_channels,
    ] {
        let v = u32::try_from(v).map_err(|_| Error::BadConfig(format!("{v} exceeds u32")))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.push(match config.head {
        HeadKind::Classify4 => 0,
        HeadKind::Regress2 => 1,
    });
    buf.extend_from_slice(&(config.dropout_rate as f32).to_le_bytes());
    for t in params.tensors() {
        buf.push(t.shape.len() as u8);
        for &d in &t.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(
            Error::Truncated {
                expected: self.pos.saturating_add(n),
                found: self.bytes.len(),
            },
        )?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(ModelConfig, ModelParams)> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let mut dims = [0usize; 9];
    for d in dims.iter_mut() {
        *d = r.u32()? as usize;
    }
    let head = match r.take(1)?[0] {
        0 => HeadKind::Classify4,
        1 => HeadKind::Regress2,
        other => return Err(Error::Corrupt(format!("head code {other}"))),
    };
    let dropout_rate = f32::from_le_bytes(r.take(4)?.try_into().unwrap()) as f64;
    let config = ModelConfig {
        image_height: dims[0],
        image_width: dims[1],
        patch_size: dims[2],
        embed_dim: dims[3],
        depth: dims[4],
        n_heads: dims[5],
        linformer_k: dims[6],
        mlp_dim: dims[7],
        n_channels: dims[8],
        head,
        dropout_rate,
    };
    config.validate().map_err(|e| Error::Corrupt(e.to_string()))?;

    let shapes = ModelParams::shapes(&config);
    let mut params = ModelParams::init(&config, 0)?;
    for (expected, dst) in shapes.iter().zip(params.tensors_mut()) {
        let rank = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        if &shape != expected {
            return Err(Error::Corrupt(format!(
                "tensor shape {shape:?}, expected {expected:?}"
            )));
        }
        let raw = r.take(4 * dst.len())?;
        for (d, b) in dst.iter_mut().zip(raw.chunks_exact(4)) {
            *d = f32::from_le_bytes(b.try_into().unwrap()) as f64;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::SizeMismatch {
            expected: r.pos,
            found: bytes.len(),
        });
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("checkpoint parameters"));
    }
    Ok((config, params))
}

pub fn save(path: &Path, config: &ModelConfig, params: &ModelParams) -> Result<()> {
    write_atomic(path, &encode(config, params)?)
}

pub fn load(path: &Path) -> Result<(ModelConfig, ModelParams)> {
    decode(&std::fs::read(path)?)
}
