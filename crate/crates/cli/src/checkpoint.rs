//! Checkpoint files: a JSON manifest plus one raw little-endian blob file
//! holding every parameter's values in manifest order.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use kghop_core::autodiff::ParamStore;
use kghop_core::tensor::Tensor;
use kghop_core::Real;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "params.bin";
const FORMAT: &str = "kghop.checkpoint.v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub precision: String,
    pub seed: u64,
    pub step: u64,
    pub params: Vec<ParamMeta>,
    /// Model-specific reconstruction info (kind, dims, vocab sizes...).
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn save<R: Real>(
    dir: &Path,
    store: &ParamStore<R>,
    seed: u64,
    step: u64,
    meta: serde_json::Value,
) -> Result<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating checkpoint dir {}", dir.display()))?;
    let mut params = Vec::with_capacity(store.len());
    let mut blob: Vec<u8> = Vec::new();
    for (_, entry) in store.iter() {
        params.push(ParamMeta {
            name: entry.name.clone(),
            shape: entry.value.shape().to_vec(),
            trainable: entry.trainable,
        });
        let start = blob.len();
        blob.resize(start + entry.value.numel() * R::BYTE_WIDTH, 0);
        for (i, &v) in entry.value.data().iter().enumerate() {
            let off = start + i * R::BYTE_WIDTH;
            v.write_le_bytes(&mut blob[off..off + R::BYTE_WIDTH]);
        }
    }
    let manifest = Manifest {
        format: FORMAT.to_string(),
        precision: R::PRECISION.to_string(),
        seed,
        step,
        params,
        meta,
    };
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    fs::write(dir.join(BLOB_FILE), blob)?;
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))
        .with_context(|| format!("reading {}", dir.join(MANIFEST_FILE).display()))?;
    let manifest: Manifest = serde_json::from_str(&text).context("parsing checkpoint manifest")?;
    if manifest.format != FORMAT {
        bail!("unsupported checkpoint format `{}`", manifest.format);
    }
    Ok(manifest)
}

pub fn load<R: Real>(dir: &Path) -> Result<(ParamStore<R>, Manifest)> {
    let manifest = load_manifest(dir)?;
    if manifest.precision != R::PRECISION {
        bail!(
            "checkpoint precision is {}, loader expects {}",
            manifest.precision,
            R::PRECISION
        );
    }
    let blob = fs::read(dir.join(BLOB_FILE))
        .with_context(|| format!("reading {}", dir.join(BLOB_FILE).display()))?;
    let mut store = ParamStore::new();
    let mut off = 0usize;
    for p in &manifest.params {
        let numel: usize = p.shape.iter().product();
        let end = off + numel * R::BYTE_WIDTH;
        if end > blob.len() {
            bail!("checkpoint blob truncated at `{}`", p.name);
        }
        let mut data = Vec::with_capacity(numel);
        for i in 0..numel {
            let at = off + i * R::BYTE_WIDTH;
            data.push(R::from_le_bytes(&blob[at..at + R::BYTE_WIDTH]));
        }
        off = end;
        let tensor = Tensor::from_vec(&p.shape, data)
            .map_err(|e| anyhow::anyhow!("parameter `{}`: {e}", p.name))?;
        store
            .insert(&p.name, tensor, p.trainable)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
    }
    if off != blob.len() {
        bail!("checkpoint blob has {} trailing bytes", blob.len() - off);
    }
    Ok((store, manifest))
}
