//! `HGCK` checkpoints: named `f32` parameter blocks followed by a CRC32.
//!
//! Layout (little-endian): magic `HGCK`, `u32` version, `u32` block count,
//! then per block `u32` name length, UTF-8 name, `u32` rank, `rank × u32`
//! dims, `f32` payload. The trailing `u32` is the CRC32 of every preceding
//! byte.

use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::{ModelState, Params};
use crate::embedding_store::PrototypeTable;
use crate::error::{shape_err, HgtError, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"HGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const PROTOTYPES: &str = "prototypes";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

fn u32_of(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| HgtError::Range(format!("{n} does not fit in u32")))
}

pub fn write_checkpoint(state: &ModelState) -> Result<Vec<u8>> {
    let mut blocks: Vec<NamedBlock> = state
        .params
        .blocks()
        .into_iter()
        .map(|b| NamedBlock {
            name: b.name,
            shape: b.shape,
            values: b.values.iter().map(|&v| v as f32).collect(),
        })
        .collect();
    if let Some(p) = &state.prototypes {
        blocks.push(NamedBlock {
            name: PROTOTYPES.into(),
            shape: p.values.shape().to_vec(),
            values: p.values.iter().map(|&v| v as f32).collect(),
        });
    }

    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    buf.write_u32::<LittleEndian>(u32_of(blocks.len())?)?;
    for b in &blocks {
        buf.write_u32::<LittleEndian>(u32_of(b.name.len())?)?;
        buf.extend_from_slice(b.name.as_bytes());
        buf.write_u32::<LittleEndian>(u32_of(b.shape.len())?)?;
        for &d in &b.shape {
            buf.write_u32::<LittleEndian>(u32_of(d)?)?;
        }
        for &v in &b.values {
            buf.write_f32::<LittleEndian>(v)?;
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.write_u32::<LittleEndian>(crc)?;
    Ok(buf)
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Vec<NamedBlock>> {
    if bytes.len() < 16 {
        return Err(HgtError::Format("checkpoint too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if body[..4] != CHECKPOINT_MAGIC {
        return Err(HgtError::Format("bad checkpoint magic".into()));
    }
    let stored = LittleEndian::read_u32(tail);
    if crc32fast::hash(body) != stored {
        return Err(HgtError::Format("checkpoint CRC mismatch".into()));
    }
    let mut r = &body[4..];
    let truncated = |_| HgtError::Format("truncated checkpoint".into());
    let version = r.read_u32::<LittleEndian>().map_err(truncated)?;
    if version != CHECKPOINT_VERSION {
        return Err(HgtError::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let n = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let mut blocks = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let len = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        if r.len() < len {
            return Err(HgtError::Format("truncated block name".into()));
        }
        let name = std::str::from_utf8(&r[..len])
            .map_err(|_| HgtError::Format("block name is not UTF-8".into()))?
            .to_string();
        r = &r[len..];
        let rank = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.read_u32::<LittleEndian>().map_err(truncated)? as usize);
        }
        let count: usize = shape.iter().product();
        if r.len() < count * 4 {
            return Err(HgtError::Format(format!("truncated payload for {name}")));
        }
        let mut values = vec![0f32; count];
        r.read_f32_into::<LittleEndian>(&mut values)
            .map_err(truncated)?;
        blocks.push(NamedBlock {
            name,
            shape,
            values,
        });
    }
    if !r.is_empty() {
        return Err(HgtError::Format("trailing bytes before CRC".into()));
    }
    Ok(blocks)
}

/// Fills a state shaped like `template` from checkpoint blocks.
///
/// Block names and shapes must match the template exactly.
pub fn state_from_blocks(template: &Params, blocks: &[NamedBlock]) -> Result<ModelState> {
    let mut params = template.zeros_like();
    let mut prototypes = None;
    let mut expected = params.blocks_mut().into_iter();
    for b in blocks {
        if b.name == PROTOTYPES {
            if b.shape.len() != 2 {
                return Err(shape_err("prototype block must be 2-D"));
            }
            let values = Array2::from_shape_vec(
                (b.shape[0], b.shape[1]),
                b.values.iter().map(|&v| f64::from(v)).collect(),
            )
            .map_err(|e| shape_err(e.to_string()))?;
            prototypes = Some(PrototypeTable {
                counts: vec![0; values.nrows()],
                values,
            });
            continue;
        }
        let slot = expected
            .next()
            .ok_or_else(|| shape_err(format!("unexpected checkpoint block {}", b.name)))?;
        if slot.name != b.name || slot.shape != b.shape {
            return Err(shape_err(format!(
                "checkpoint block {} {:?} does not match model block {} {:?}",
                b.name, b.shape, slot.name, slot.shape
            )));
        }
        for (dst, &src) in slot.values.iter_mut().zip(&b.values) {
            *dst = f64::from(src);
        }
    }
    if let Some(missing) = expected.next() {
        return Err(shape_err(format!(
            "checkpoint lacks block {}",
            missing.name
        )));
    }
    if let Some(p) = &prototypes {
        if p.values.dim() != template.text_offsets.dim() {
            return Err(shape_err(format!(
                "prototype table {:?} vs model {:?}",
                p.values.dim(),
                template.text_offsets.dim()
            )));
        }
    }
    Ok(ModelState {
        params,
        prototypes,
        step: 0,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, state: &ModelState) -> Result<()> {
    fs::write(path, write_checkpoint(state)?)?;
    Ok(())
}

/// Reads a checkpoint into a state laid out like `template`.
pub fn load_checkpoint(path: impl AsRef<Path>, template: &Params) -> Result<ModelState> {
    let bytes = fs::read(path)?;
    state_from_blocks(template, &read_checkpoint(&bytes)?)
}
