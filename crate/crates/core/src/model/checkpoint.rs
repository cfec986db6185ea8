//! Single-file checkpoints.
//!
//! Layout: the 8-byte magic `FDRNCKPT`, a little-endian `u32` format
//! version, a little-endian `u64` manifest length, the JSON manifest, then
//! every tensor as little-endian `f32`, row-major, in manifest order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::net::{FaderNet, FaderRange, TrainMeta};
use crate::diff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FDRNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRange {
    pub latent: String,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSummary {
    pub latent: String,
    /// `K` rows of `z_dim` values.
    pub means: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    /// Content hash of the manifest (with this field empty) and the blob.
    pub id: String,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    pub fader_ranges: Vec<LatentRange>,
    pub prior: Vec<PriorSummary>,
    pub train: Option<TrainMeta>,
}

pub fn latent_names(latents: usize) -> &'static [&'static str] {
    if latents == 1 {
        &["global"]
    } else {
        &["rhythm", "note"]
    }
}

fn content_id(manifest: &Manifest, blob: &[u8]) -> Result<String> {
    let mut unsigned = manifest.clone();
    unsigned.id.clear();
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&unsigned)?);
    h.update(blob);
    Ok(h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect())
}

fn build(model: &FaderNet<f32>) -> Result<(Manifest, Vec<u8>)> {
    let mut blob = Vec::with_capacity(model.store().num_scalars() * 4);
    let mut tensors = Vec::with_capacity(model.store().len());
    for p in model.store().iter() {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset: blob.len() as u64,
        });
        for v in p.value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let names = latent_names(model.latent_count());
    let fader_ranges = model
        .fader_ranges
        .iter()
        .zip(names)
        .map(|(r, n)| LatentRange {
            latent: n.to_string(),
            min: r.min,
            max: r.max,
        })
        .collect();
    let mut prior = Vec::new();
    for (slot, name) in names.iter().enumerate() {
        if let Ok(means) = model.prior_means_tensor(slot) {
            prior.push(PriorSummary {
                latent: name.to_string(),
                means: (0..means.rows())
                    .map(|r| means.row(r).iter().map(|&v| v as f64).collect())
                    .collect(),
            });
        }
    }
    let mut manifest = Manifest {
        version: CHECKPOINT_VERSION,
        id: String::new(),
        config: model.config().clone(),
        tensors,
        fader_ranges,
        prior,
        train: model.train_meta,
    };
    manifest.id = content_id(&manifest, &blob)?;
    Ok((manifest, blob))
}

/// Manifest describing `model` as it would be saved.
pub fn manifest(model: &FaderNet<f32>) -> Result<Manifest> {
    Ok(build(model)?.0)
}

pub fn checkpoint_id(model: &FaderNet<f32>) -> Result<String> {
    Ok(build(model)?.0.id)
}

pub fn to_bytes(model: &FaderNet<f32>) -> Result<Vec<u8>> {
    let (manifest, blob) = build(model)?;
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(20 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::MalformedCheckpoint(msg.into())
}

/// Parses a checkpoint, returning the model and its manifest.
pub fn from_bytes(bytes: &[u8]) -> Result<(FaderNet<f32>, Manifest)> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("missing FDRNCKPT magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let json = bytes.get(20..20 + len).ok_or_else(|| bad("truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(json).map_err(|e| bad(format!("manifest: {e}")))?;
    let blob = &bytes[20 + len..];
    if content_id(&manifest, blob)? != manifest.id {
        return Err(bad("content hash does not match the manifest id"));
    }

    let mut model = FaderNet::<f32>::new(manifest.config.clone(), 0)?;
    if manifest.tensors.len() != model.store().len() {
        return Err(bad(format!(
            "{} tensors stored, model has {}",
            manifest.tensors.len(),
            model.store().len()
        )));
    }
    for entry in &manifest.tensors {
        let id = model
            .store()
            .find(&entry.name)
            .ok_or_else(|| bad(format!("unknown tensor {}", entry.name)))?;
        if model.store().value(id).shape() != entry.shape.as_slice() {
            return Err(bad(format!("tensor {} has shape {:?}", entry.name, entry.shape)));
        }
        let count: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let raw = blob
            .get(start..start + 4 * count)
            .ok_or_else(|| bad(format!("tensor {} runs past the blob", entry.name)))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        model.store_mut().get_mut(id).value = Tensor::new(entry.shape.clone(), data)?;
    }
    model.fader_ranges = manifest
        .fader_ranges
        .iter()
        .map(|r| FaderRange { min: r.min, max: r.max })
        .collect();
    model.train_meta = manifest.train;
    Ok((model, manifest))
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| bad(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn save(model: &FaderNet<f32>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &to_bytes(model)?)
}

pub fn load(path: impl AsRef<Path>) -> Result<(FaderNet<f32>, Manifest)> {
    from_bytes(&fs::read(path)?)
}
