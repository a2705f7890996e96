//! Binary parameter checkpoints.
//!
//! Layout of `params.bin`, all integers little-endian:
//!
//! ```text
//! magic            8 bytes  b"STHDCKPT"
//! format_version   u32
//! param_count      u32
//! then per parameter, in store order:
//!   name_len       u32
//!   name           name_len bytes, UTF-8
//!   ndim           u32
//!   dims           ndim x u64
//!   values         prod(dims) x f64
//! ```
//!
//! A `manifest.json` written next to it lists every (name, shape) pair plus
//! a caller-supplied `extra` payload (the model config), so checkpoints are
//! self-describing.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::params::ParamStore;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"STHDCKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    params: Vec<ManifestEntry>,
    extra: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Write `params.bin` and `manifest.json` into `dir`.
pub fn save_checkpoint(store: &ParamStore, extra: serde_json::Value, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    let mut manifest_params = Vec::with_capacity(store.len());
    for p in store.entries() {
        let name_bytes = p.name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.extend_from_slice(&(p.value.shape.len() as u32).to_le_bytes());
        for &d in &p.value.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &p.value.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        manifest_params.push(ManifestEntry {
            name: p.name.clone(),
            shape: p.value.shape.clone(),
        });
    }
    let mut bin = std::fs::File::create(dir.join("params.bin"))?;
    bin.write_all(&buf)?;
    bin.flush()?;

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        params: manifest_params,
        extra,
    };
    let mut mf = std::fs::File::create(dir.join("manifest.json"))?;
    mf.write_all(serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    mf.write_all(b"\n")?;
    mf.flush()?;
    Ok(())
}

/// Read a checkpoint back: the ordered parameter entries plus the manifest's
/// `extra` payload.
pub fn load_checkpoint(dir: &Path) -> Result<(Vec<CheckpointEntry>, serde_json::Value)> {
    let mut bytes = Vec::new();
    std::fs::File::open(dir.join("params.bin"))?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::Checkpoint("params.bin truncated".into()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic in params.bin".into()));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let ndim = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut values = Vec::with_capacity(numel);
        for _ in 0..numel {
            values.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        entries.push(CheckpointEntry {
            name,
            shape,
            values,
        });
    }
    if pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes in params.bin".into()));
    }

    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.params.len() != entries.len() {
        return Err(Error::Checkpoint(
            "manifest and params.bin disagree on parameter count".into(),
        ));
    }
    Ok((entries, manifest.extra))
}

/// Restore values into an existing store whose names and shapes must match.
pub fn restore_into(store: &mut ParamStore, entries: &[CheckpointEntry]) -> Result<()> {
    if entries.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} parameters, model expects {}",
            entries.len(),
            store.len()
        )));
    }
    let ids: Vec<_> = store.ids().collect();
    for (e, &id) in entries.iter().zip(&ids) {
        if store.name(id) != e.name || store.shape(id) != e.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "parameter mismatch: checkpoint `{}` {:?} vs model `{}` {:?}",
                e.name,
                e.shape,
                store.name(id),
                store.shape(id)
            )));
        }
        store.data_mut(id).copy_from_slice(&e.values);
    }
    Ok(())
}
