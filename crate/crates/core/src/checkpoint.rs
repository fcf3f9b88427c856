//! Checkpoint directories: `manifest.json` plus `weights.bin`.
//!
//! `weights.bin` is the 8-byte magic `PCIMWGT1`, a little-endian `u64` value
//! count, then every weight tensor in layer declaration order (weight before
//! bias) as little-endian `f32`. The manifest records each tensor's shape and
//! its offset in values from the start of the payload.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{Checkpoint, TrainManifest};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::network::{hex, Layer, LayerSpec, Network};
use crate::tensor::Tensor;

pub const MANIFEST_NAME: &str = "manifest.json";
pub const WEIGHTS_NAME: &str = "weights.bin";
pub const MAGIC: &[u8; 8] = b"PCIMWGT1";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: u64 = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    #[serde(flatten)]
    pub spec: LayerSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub layers: Vec<LayerEntry>,
    pub weight_count: usize,
    /// SHA-256 of the `f32` payload, equal to the network checksum.
    pub weights_sha256: String,
    pub epoch: usize,
    pub validation_loss: f64,
    pub training: TrainManifest,
}

pub fn save_checkpoint(ck: &Checkpoint, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let net = &ck.network;
    let (height, width) = net.input_dims();
    let mut offset = 0;
    let layers = net
        .layers()
        .iter()
        .map(|l| LayerEntry {
            name: l.name.clone(),
            spec: l.spec.clone(),
            tensors: l
                .params
                .iter()
                .map(|p| {
                    let e = TensorEntry {
                        shape: p.shape().to_vec(),
                        offset,
                    };
                    offset += p.numel();
                    e
                })
                .collect(),
        })
        .collect();
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        height,
        width,
        num_classes: net.num_classes(),
        layers,
        weight_count: offset,
        weights_sha256: net.checksum(),
        epoch: ck.epoch,
        validation_loss: ck.validation_loss,
        training: ck.manifest.clone(),
    };
    let mut blob = Vec::with_capacity(HEADER_LEN as usize + offset * 4);
    blob.extend_from_slice(MAGIC);
    blob.extend_from_slice(&(offset as u64).to_le_bytes());
    for p in net.parameters() {
        for v in p.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let wpath = dir.join(WEIGHTS_NAME);
    fs::write(&wpath, blob).map_err(|e| Error::io(&wpath, e))?;
    let mpath = dir.join(MANIFEST_NAME);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&mpath, json + "\n").map_err(|e| Error::io(&mpath, e))
}

fn format_err(path: &Path, offset: u64, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset,
        detail: detail.into(),
    }
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let mpath = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    serde_json::from_str(&text).map_err(|e| {
        // Approximate byte offset of the parse failure.
        let offset: usize = text.lines().take(e.line().saturating_sub(1)).map(|l| l.len() + 1).sum::<usize>() + e.column();
        format_err(&mpath, offset as u64, e.to_string())
    })
}

/// Loads a checkpoint. The network comes back unfrozen.
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let m = read_manifest(dir)?;
    let mpath: PathBuf = dir.join(MANIFEST_NAME);
    if m.format_version != FORMAT_VERSION {
        return Err(format_err(&mpath, 0, format!("unsupported format version {}", m.format_version)));
    }
    let wpath = dir.join(WEIGHTS_NAME);
    let blob = fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
    if blob.len() < 8 || &blob[..8] != MAGIC {
        return Err(format_err(&wpath, 0, "missing weights magic"));
    }
    if blob.len() < HEADER_LEN as usize {
        return Err(format_err(&wpath, blob.len() as u64, "truncated header"));
    }
    let count = u64::from_le_bytes(blob[8..16].try_into().unwrap());
    if count != m.weight_count as u64 {
        return Err(format_err(&wpath, 8, format!("{count} values, manifest says {}", m.weight_count)));
    }
    let expected = HEADER_LEN + count * 4;
    if (blob.len() as u64) < expected {
        // The first incomplete value starts here.
        let whole = (blob.len() as u64 - HEADER_LEN) / 4 * 4 + HEADER_LEN;
        return Err(format_err(&wpath, whole, format!("truncated: {} of {expected} bytes", blob.len())));
    }
    if blob.len() as u64 > expected {
        return Err(format_err(&wpath, expected, "trailing bytes after the weights"));
    }
    let values: Vec<f32> = blob[HEADER_LEN as usize..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let digest = hex(&Sha256::digest(&blob[HEADER_LEN as usize..]));
    if digest != m.weights_sha256 {
        return Err(format_err(&wpath, HEADER_LEN, "weights do not match the manifest checksum"));
    }
    let layers = m
        .layers
        .iter()
        .map(|l| {
            let params = l
                .tensors
                .iter()
                .map(|t| {
                    let n: usize = t.shape.iter().product();
                    let end = t.offset.checked_add(n).filter(|&e| e <= values.len()).ok_or_else(|| {
                        format_err(&mpath, 0, format!("tensor of layer '{}' overruns the weights", l.name))
                    })?;
                    Tensor::new(t.shape.clone(), values[t.offset..end].to_vec())
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Layer {
                name: l.name.clone(),
                spec: l.spec.clone(),
                params,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let network = Network::from_layers(m.height, m.width, m.num_classes, layers)?;
    Ok(Checkpoint {
        network,
        epoch: m.epoch,
        validation_loss: m.validation_loss,
        manifest: m.training,
    })
}
