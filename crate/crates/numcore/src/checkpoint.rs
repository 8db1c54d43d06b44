//! Binary checkpoint container.
//!
//! Layout on disk:
//!
//! ```text
//! "SWLMCKPT"            8 bytes
//! format version        u32 LE
//! header length         u64 LE
//! header                UTF-8 JSON (format version, caller metadata, parameter layout)
//! storages              f32 LE, one dense array per unique storage, in storage order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NumError, Result};
use crate::params::{ParamLayout, ParamRegistry};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"SWLMCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    meta: serde_json::Value,
    layout: ParamLayout,
}

pub fn write_checkpoint<W: Write>(
    mut w: W,
    meta: &serde_json::Value,
    reg: &ParamRegistry<f32>,
) -> Result<()> {
    let header = Header {
        format_version: FORMAT_VERSION,
        meta: meta.clone(),
        layout: reg.layout().clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| NumError::Checkpoint(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for t in reg.storage_values() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(serde_json::Value, ParamRegistry<f32>)> {
    let bad = |m: &str| NumError::Checkpoint(m.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != FORMAT_VERSION {
        return Err(NumError::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| NumError::Checkpoint(e.to_string()))?;
    if header.format_version != version {
        return Err(bad("header version disagrees with preamble"));
    }
    let layout = header.layout;
    for (name, id) in layout.slots() {
        if id.0 >= layout.storages().len() {
            return Err(NumError::Checkpoint(format!(
                "slot {name} points at missing storage {}",
                id.0
            )));
        }
    }
    let mut values = Vec::with_capacity(layout.storages().len());
    for spec in layout.storages() {
        let mut bytes = vec![0u8; spec.numel() * 4];
        r.read_exact(&mut bytes).map_err(|_| bad("truncated storage data"))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        values.push(Tensor::from_vec(&spec.shape, data)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes after storage data"));
    }
    let reg = ParamRegistry::from_values(layout, values)?;
    Ok((header.meta, reg))
}

pub fn save(path: &Path, meta: &serde_json::Value, reg: &ParamRegistry<f32>) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), meta, reg)
}

pub fn load(path: &Path) -> Result<(serde_json::Value, ParamRegistry<f32>)> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
