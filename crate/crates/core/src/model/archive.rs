//! Flat named-tensor archive and checkpoint directories.
//!
//! `weights.bin`: magic `SDTENSOR`, `u32` version, `u32` tensor count, then
//! per tensor `u32` name length, UTF-8 name, `u32` rank, `u64` dims, and
//! `f32` values, all little-endian. `model.json` carries the config,
//! taxonomy, scheme and free-form metadata.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::convnext::Detector;
use super::{ModelConfig, ModelError, Scheme};
use crate::dataset::ClassTaxonomy;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SDTENSOR";
const WEIGHTS_FILE: &str = "weights.bin";
const MODEL_FILE: &str = "model.json";

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

fn io_err(path: &Path, source: std::io::Error) -> ModelError {
    ModelError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn encode_archive(tensors: &[NamedTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_archive(bytes: &[u8]) -> Result<Vec<NamedTensor>, ModelError> {
    let mut r = bytes;
    let bad = |m: &str| ModelError::Checkpoint(format!("corrupt archive: {m}"));
    let mut take = |n: usize| -> Result<&[u8], ModelError> {
        if r.len() < n {
            return Err(bad("truncated"));
        }
        let (head, tail) = r.split_at(n);
        r = tail;
        Ok(head)
    };
    if take(8)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
    let version = u32_at(take(4)?);
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported archive version {version}")));
    }
    let count = u32_at(take(4)?) as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = u32_at(take(4)?) as usize;
        let name = String::from_utf8(take(len)?.to_vec()).map_err(|_| bad("tensor name is not UTF-8"))?;
        let rank = u32_at(take(4)?) as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            let d = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
            shape.push(usize::try_from(d).map_err(|_| bad("dimension overflow"))?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| bad("tensor too large"))?;
        let data = take(numel)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.push(NamedTensor { name, shape, data });
    }
    if !r.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok(out)
}

pub fn write_archive(path: impl AsRef<Path>, tensors: &[NamedTensor]) -> Result<(), ModelError> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(&encode_archive(tensors)).map_err(|e| io_err(path, e))
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<Vec<NamedTensor>, ModelError> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(path, e))?;
    decode_archive(&bytes)
}

impl Detector<f32> {
    pub fn to_named(&self) -> Vec<NamedTensor> {
        self.params()
            .iter()
            .map(|p| NamedTensor {
                name: p.name.clone(),
                shape: p.shape.clone(),
                data: p.data.clone(),
            })
            .collect()
    }

    /// Shape-checked load of every tensor from an archive, e.g. weights
    /// trained with the other stem stride.
    pub fn load_pretrained(&mut self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let named: Vec<_> = read_archive(path)?.into_iter().map(|t| (t.name, t.shape, t.data)).collect();
        self.load_named(&named)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    config: ModelConfig,
    taxonomy: ClassTaxonomy,
    scheme: Scheme,
    meta: Vec<(String, String)>,
}

/// A trained model with the scheme it was trained under.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Detector<f32>,
    pub scheme: Scheme,
    pub meta: Vec<(String, String)>,
}

/// Write `dir/model.json` and `dir/weights.bin`.
pub fn save_checkpoint(dir: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<(), ModelError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let file = ModelFile {
        format_version: CHECKPOINT_VERSION,
        config: ckpt.model.config().clone(),
        taxonomy: ckpt.model.taxonomy().clone(),
        scheme: ckpt.scheme,
        meta: ckpt.meta.clone(),
    };
    let json = serde_json::to_string_pretty(&file).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let mpath = dir.join(MODEL_FILE);
    fs::write(&mpath, json + "\n").map_err(|e| io_err(&mpath, e))?;
    write_archive(dir.join(WEIGHTS_FILE), &ckpt.model.to_named())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint, ModelError> {
    let dir = dir.as_ref();
    let mpath = dir.join(MODEL_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| io_err(&mpath, e))?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", mpath.display())))?;
    if file.format_version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported checkpoint version {}",
            file.format_version
        )));
    }
    let mut model = Detector::new(file.config, file.taxonomy, 0)?;
    model.load_pretrained(dir.join(WEIGHTS_FILE))?;
    Ok(Checkpoint {
        model,
        scheme: file.scheme,
        meta: file.meta,
    })
}
