//! Model-level checkpoint save/load: the parameter blobs plus enough
//! metadata to rebuild the model objects.

use std::path::Path;

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};

use kghop_core::kge::{ConvEShape, KgeKind, KgeModel};
use kghop_core::policy::{PolicyConfig, PolicyNetwork};
use kghop_core::Real;

use crate::checkpoint;

#[derive(Debug, Serialize, Deserialize)]
struct KgeMeta {
    model: String,
    kind: KgeKind,
    dim: usize,
    entities: usize,
    relations: usize,
    norm: u8,
    conve: Option<ConvEShape>,
}

pub fn save_kge<R: Real>(dir: &Path, model: &KgeModel<R>, seed: u64, step: u64) -> Result<()> {
    let meta = serde_json::to_value(KgeMeta {
        model: "kge".to_string(),
        kind: model.kind,
        dim: model.dim,
        entities: model.num_entities,
        relations: model.num_relations,
        norm: model.norm,
        conve: model.conve,
    })?;
    checkpoint::save(dir, &model.store, seed, step, meta)
}

pub fn load_kge<R: Real>(dir: &Path) -> Result<KgeModel<R>> {
    let (store, manifest) = checkpoint::load::<R>(dir)
        .with_context(|| format!("loading score model from {}", dir.display()))?;
    let meta: KgeMeta = serde_json::from_value(manifest.meta)
        .context("score-model checkpoint metadata")?;
    if meta.model != "kge" {
        return Err(anyhow!("{} holds a `{}` checkpoint", dir.display(), meta.model));
    }
    KgeModel::from_parts(
        meta.kind,
        meta.entities,
        meta.relations,
        meta.dim,
        meta.norm,
        meta.conve,
        store,
    )
    .map_err(|e| anyhow!("{e}"))
}

#[derive(Debug, Serialize, Deserialize)]
struct PolicyMeta {
    model: String,
    entities: usize,
    relations: usize,
    policy: PolicyConfig,
}

pub fn save_policy<R: Real>(
    dir: &Path,
    policy: &PolicyNetwork<R>,
    seed: u64,
    step: u64,
) -> Result<()> {
    let meta = serde_json::to_value(PolicyMeta {
        model: "policy".to_string(),
        entities: policy.num_entities,
        relations: policy.num_relations,
        policy: policy.cfg.clone(),
    })?;
    checkpoint::save(dir, &policy.store, seed, step, meta)
}

pub fn load_policy<R: Real>(dir: &Path) -> Result<PolicyNetwork<R>> {
    let (store, manifest) = checkpoint::load::<R>(dir)
        .with_context(|| format!("loading policy from {}", dir.display()))?;
    let meta: PolicyMeta =
        serde_json::from_value(manifest.meta).context("policy checkpoint metadata")?;
    if meta.model != "policy" {
        return Err(anyhow!("{} holds a `{}` checkpoint", dir.display(), meta.model));
    }
    PolicyNetwork::from_parts(meta.entities, meta.relations, meta.policy, store)
        .map_err(|e| anyhow!("{e}"))
}
