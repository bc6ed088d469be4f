//! Checkpoints: a JSON manifest (config, vocabularies, parameter table)
//! next to a flat little-endian f64 blob. Round trips are bit-exact.
//!
//! `save` writes `<stem>.json` and `<stem>.bin`; `load` reads both back
//! and verifies the format version, the vocabulary hash, the parameter
//! table, and the blob length.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Relations, Vocab};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in f64 elements.
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub model: ModelConfig,
    pub vocab: Vec<String>,
    pub relations: Vec<String>,
    /// FNV-1a over the vocabulary and relation labels.
    pub vocab_hash: String,
    pub params: Vec<ParamEntry>,
}

/// FNV-1a 64-bit over the token and relation lists, newline separated.
pub fn vocab_hash(vocab: &[String], relations: &[String]) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
    };
    for t in vocab {
        eat(t.as_bytes());
        eat(b"\n");
    }
    eat(b"--relations--\n");
    for r in relations {
        eat(r.as_bytes());
        eat(b"\n");
    }
    format!("{hash:016x}")
}

fn stem_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

pub fn save(stem: &Path, model: &Model, vocab: &Vocab, relations: &Relations) -> Result<()> {
    let mut params = Vec::with_capacity(model.store.len());
    let mut blob: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    for (_, p) in model.store.iter() {
        params.push(ParamEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset,
        });
        for v in p.value.values() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        offset += p.value.len();
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        model: model.config.clone(),
        vocab: vocab.tokens().to_vec(),
        relations: relations.labels().to_vec(),
        vocab_hash: vocab_hash(vocab.tokens(), relations.labels()),
        params,
    };
    let (json_path, bin_path) = stem_paths(stem);
    if let Some(dir) = stem.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Checkpoint(format!("manifest encode: {e}")))?;
    fs::write(json_path, json)?;
    fs::write(bin_path, blob)?;
    Ok(())
}

/// Parse and structurally validate a manifest from raw bytes.
pub fn manifest_from_slice(bytes: &[u8]) -> Result<Manifest> {
    let manifest: Manifest = serde_json::from_slice(bytes)
        .map_err(|e| Error::Checkpoint(format!("manifest parse: {e}")))?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {FORMAT_VERSION})",
            manifest.version
        )));
    }
    let recomputed = vocab_hash(&manifest.vocab, &manifest.relations);
    if recomputed != manifest.vocab_hash {
        return Err(Error::Checkpoint(format!(
            "vocab hash mismatch: manifest says {}, contents hash to {recomputed}",
            manifest.vocab_hash
        )));
    }
    // offsets must tile the blob without gaps or overlaps
    let mut expect = 0usize;
    for entry in &manifest.params {
        if entry.offset != expect {
            return Err(Error::Checkpoint(format!(
                "param {} at offset {}, expected {expect}",
                entry.name, entry.offset
            )));
        }
        let len: usize = entry.shape.iter().product();
        if len == 0 {
            return Err(Error::Checkpoint(format!("param {} has empty shape", entry.name)));
        }
        expect = expect
            .checked_add(len)
            .ok_or_else(|| Error::Checkpoint("parameter table overflows".into()))?;
    }
    Ok(manifest)
}

/// Extract the parameter values from a blob per the manifest's table.
pub fn values_from_blob(manifest: &Manifest, blob: &[u8]) -> Result<Vec<Vec<f64>>> {
    let total: usize = manifest
        .params
        .iter()
        .map(|p| p.shape.iter().product::<usize>())
        .sum();
    if blob.len() != total * 8 {
        return Err(Error::Checkpoint(format!(
            "blob holds {} bytes, manifest wants {}",
            blob.len(),
            total * 8
        )));
    }
    let mut out = Vec::with_capacity(manifest.params.len());
    for entry in &manifest.params {
        let len: usize = entry.shape.iter().product();
        let start = entry.offset * 8;
        let values: Vec<f64> = blob[start..start + len * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!(
                "param {} contains non-finite values",
                entry.name
            )));
        }
        out.push(values);
    }
    Ok(out)
}

pub fn load(stem: &Path) -> Result<(Model, Vocab, Relations)> {
    let (json_path, bin_path) = stem_paths(stem);
    let manifest = manifest_from_slice(&fs::read(&json_path)?)?;
    let blob = fs::read(&bin_path)?;
    let values = values_from_blob(&manifest, &blob)?;

    let vocab = Vocab::from_tokens(manifest.vocab.clone())?;
    let relations = Relations::from_labels(manifest.relations.clone());
    if relations.labels() != manifest.relations.as_slice() {
        return Err(Error::Checkpoint("relation labels not sorted/unique".into()));
    }

    // rebuild the parameter layout, then overwrite every value
    let mut model = Model::new(manifest.model.clone(), 0);
    if model.store.len() != manifest.params.len() {
        return Err(Error::Checkpoint(format!(
            "model has {} params, manifest lists {}",
            model.store.len(),
            manifest.params.len()
        )));
    }
    let ids: Vec<_> = model.store.iter().map(|(id, _)| id).collect();
    for ((id, entry), values) in ids.iter().zip(&manifest.params).zip(values) {
        let param = model.store.get_mut(*id);
        if param.name != entry.name || param.value.shape() != entry.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "param mismatch: model has {} {:?}, manifest has {} {:?}",
                param.name,
                param.value.shape(),
                entry.name,
                entry.shape
            )));
        }
        param.value.values_mut().copy_from_slice(&values);
    }
    Ok((model, vocab, relations))
}
