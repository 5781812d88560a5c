//! Checkpoint directories: `manifest.json` plus `params.bin`.
//!
//! The blob is every parameter tensor, row-major `f32` little-endian, in
//! manifest order with no padding. The manifest records each tensor's name,
//! shape, role and byte offset together with the model configuration and
//! the run that produced it.

use std::fs;
use std::path::Path;

use devid_core::layers::{ParamSet, Role};
use devid_core::train::TrainConfig;
use devid_core::{DeviceIdModel, ModelConfig, Tensor};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "params.bin";
pub const FORMAT: &str = "devid-checkpoint-1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Weight,
    Buffer,
}

impl From<Role> for ParamRole {
    fn from(r: Role) -> Self {
        match r {
            Role::Weight => ParamRole::Weight,
            Role::Buffer => ParamRole::Buffer,
        }
    }
}

impl From<ParamRole> for Role {
    fn from(r: ParamRole) -> Self {
        match r {
            ParamRole::Weight => Role::Weight,
            ParamRole::Buffer => Role::Buffer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: ParamRole,
    /// Byte offset into the blob.
    pub offset: u64,
}

impl ParamEntry {
    fn bytes(&self) -> u64 {
        4 * self.shape.iter().product::<usize>() as u64
    }
}

/// How a checkpoint was produced.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub command: String,
    pub seed: u64,
    pub features: Option<String>,
    /// Checkpoint this one was fine-tuned from.
    pub parent: Option<String>,
    pub train: Option<TrainConfig>,
    pub best_epoch: Option<usize>,
    pub steps: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub model: ModelConfig,
    pub params: Vec<ParamEntry>,
    pub blob_bytes: u64,
    pub provenance: Provenance,
}

/// Manifest and blob for a model.
pub fn encode_checkpoint(model: &DeviceIdModel<f32>, provenance: Provenance) -> (Manifest, Vec<u8>) {
    let mut blob = Vec::with_capacity(4 * model.params.scalar_count());
    let mut params = Vec::with_capacity(model.params.len());
    for (_, p) in model.params.iter() {
        params.push(ParamEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            role: p.role.into(),
            offset: blob.len() as u64,
        });
        for v in p.value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        model: model.config.clone(),
        params,
        blob_bytes: blob.len() as u64,
        provenance,
    };
    (manifest, blob)
}

/// Rebuilds a model from a manifest and blob; `path` only labels errors.
pub fn decode_checkpoint(manifest: &Manifest, blob: &[u8], path: &Path) -> Result<DeviceIdModel<f32>> {
    let corrupt = |detail: String| Error::CorruptCheckpoint { path: path.to_path_buf(), detail };
    if manifest.format != FORMAT {
        return Err(corrupt(format!("unknown format `{}`", manifest.format)));
    }
    if blob.len() as u64 != manifest.blob_bytes {
        return Err(corrupt(format!("blob has {} bytes, manifest declares {}", blob.len(), manifest.blob_bytes)));
    }
    let mut next = 0u64;
    let mut params = ParamSet::new();
    for entry in &manifest.params {
        if entry.offset != next {
            return Err(corrupt(format!("`{}` at offset {}, expected {next}", entry.name, entry.offset)));
        }
        next += entry.bytes();
        if next > blob.len() as u64 {
            return Err(corrupt(format!("`{}` runs past the end of the blob", entry.name)));
        }
        let data = blob[entry.offset as usize..next as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        params.add(entry.name.clone(), Tensor::new(&entry.shape, data)?, entry.role.into());
    }
    if next != blob.len() as u64 {
        return Err(corrupt(format!("{} trailing blob bytes", blob.len() as u64 - next)));
    }
    Ok(DeviceIdModel::from_params(manifest.model.clone(), params)?)
}

pub fn save_checkpoint(dir: &Path, model: &DeviceIdModel<f32>, provenance: Provenance) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let (manifest, blob) = encode_checkpoint(model, provenance);
    let blob_path = dir.join(BLOB_FILE);
    fs::write(&blob_path, &blob).map_err(Error::io(&blob_path))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    fs::write(&manifest_path, text).map_err(Error::io(&manifest_path))?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<(DeviceIdModel<f32>, Manifest)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(Error::io(&manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::CorruptCheckpoint { path: manifest_path.clone(), detail: e.to_string() })?;
    let blob_path = dir.join(BLOB_FILE);
    let blob = fs::read(&blob_path).map_err(Error::io(&blob_path))?;
    let model = decode_checkpoint(&manifest, &blob, dir)?;
    Ok((model, manifest))
}
