//! Embedding score models (TransE, DistMult, ConvE).
//!
//! One trained model is used three ways downstream: tail-entity
//! distributions feed the walker's anticipation vector, top-k tail
//! predictions feed dynamic action-space completion, and sigmoid-squashed
//! triple scores provide reward shaping for wrong terminals.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, BnAxes, ParamId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Split, Triple};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Shaped rewards must stay strictly inside (0, 1); exact 1.0 is reserved
/// for gold hits.
const SCORE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KgeKind {
    TransE,
    DistMult,
    ConvE,
}

/// ConvE layout: embeddings are viewed as `rows x cols` images, head and
/// relation stacked vertically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvEShape {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub kernel: usize,
    pub input_dropout: f64,
    pub feature_dropout: f64,
    pub hidden_dropout: f64,
}

impl Default for ConvEShape {
    fn default() -> Self {
        ConvEShape {
            rows: 10,
            cols: 20,
            channels: 32,
            kernel: 3,
            input_dropout: 0.2,
            feature_dropout: 0.2,
            hidden_dropout: 0.3,
        }
    }
}

impl ConvEShape {
    fn feature_len(&self) -> usize {
        let oh = 2 * self.rows - self.kernel + 1;
        let ow = self.cols - self.kernel + 1;
        self.channels * oh * ow
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KgeConfig {
    pub kind: KgeKind,
    pub dim: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub label_smoothing: f64,
    /// Corrupted tails per positive (TransE only).
    pub negatives: usize,
    pub margin: f64,
    /// Distance norm for TransE: 1 or 2.
    pub norm: u8,
    pub conve: ConvEShape,
    /// Evaluate filtered valid MRR every this many epochs (0 = never).
    pub eval_every: usize,
    /// Stop after this many evaluations without improvement.
    pub patience: usize,
    pub seed: u64,
}

impl Default for KgeConfig {
    fn default() -> Self {
        KgeConfig {
            kind: KgeKind::ConvE,
            dim: 200,
            lr: 1e-3,
            epochs: 100,
            batch_size: 128,
            label_smoothing: 0.1,
            negatives: 10,
            margin: 1.0,
            norm: 1,
            conve: ConvEShape::default(),
            eval_every: 5,
            patience: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KgeEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub valid_mrr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct KgeModel<R> {
    pub kind: KgeKind,
    pub dim: usize,
    pub num_entities: usize,
    /// Augmented relation count (base + inverses + LOOP).
    pub num_relations: usize,
    pub conve: Option<ConvEShape>,
    pub store: ParamStore<R>,
    pub norm: u8,
}

struct ConvEIds {
    conv_w: ParamId,
    conv_b: ParamId,
    fc_w: ParamId,
    fc_b: ParamId,
    bn0: [ParamId; 4],
    bn1: [ParamId; 4],
    bn2: [ParamId; 4],
    entity_bias: ParamId,
}

impl<R: Real> KgeModel<R> {
    pub fn new(
        kind: KgeKind,
        num_entities: usize,
        num_relations: usize,
        dim: usize,
        conve: ConvEShape,
        rng: &mut Rng,
    ) -> Result<Self> {
        if num_entities == 0 || num_relations == 0 {
            return Err(Error::config("empty vocabulary"));
        }
        let mut store = ParamStore::new();
        store.insert("entity", Tensor::xavier(&[num_entities, dim], rng), true)?;
        store.insert("relation", Tensor::xavier(&[num_relations, dim], rng), true)?;
        let conve = match kind {
            KgeKind::ConvE => {
                if conve.rows * conve.cols != dim {
                    return Err(Error::config(format!(
                        "ConvE image {}x{} does not tile dim {dim}",
                        conve.rows, conve.cols
                    )));
                }
                if conve.kernel > conve.cols || conve.kernel > 2 * conve.rows {
                    return Err(Error::config("ConvE kernel larger than image"));
                }
                store.insert(
                    "conv_w",
                    Tensor::xavier(&[conve.channels, 1, conve.kernel, conve.kernel], rng),
                    true,
                )?;
                store.insert("conv_b", Tensor::zeros(&[conve.channels]), true)?;
                store.insert(
                    "fc_w",
                    Tensor::xavier(&[dim, conve.feature_len()], rng),
                    true,
                )?;
                store.insert("fc_b", Tensor::zeros(&[dim]), true)?;
                for (prefix, n) in [("bn0", 1), ("bn1", conve.channels), ("bn2", dim)] {
                    store.insert(&format!("{prefix}_gamma"), Tensor::full(&[n], R::ONE), true)?;
                    store.insert(&format!("{prefix}_beta"), Tensor::zeros(&[n]), true)?;
                    store.insert(&format!("{prefix}_mean"), Tensor::zeros(&[n]), false)?;
                    store.insert(&format!("{prefix}_var"), Tensor::full(&[n], R::ONE), false)?;
                }
                store.insert("entity_bias", Tensor::zeros(&[num_entities]), true)?;
                Some(conve)
            }
            _ => None,
        };
        Ok(KgeModel {
            kind,
            dim,
            num_entities,
            num_relations,
            conve,
            store,
            norm: 1,
        })
    }

    /// Rebuild a model around a restored parameter store (checkpoint load).
    pub fn from_parts(
        kind: KgeKind,
        num_entities: usize,
        num_relations: usize,
        dim: usize,
        norm: u8,
        conve: Option<ConvEShape>,
        store: ParamStore<R>,
    ) -> Result<Self> {
        for name in ["entity", "relation"] {
            if store.id_of(name).is_none() {
                return Err(Error::config(format!("checkpoint missing `{name}` table")));
            }
        }
        let model = KgeModel {
            kind,
            dim,
            num_entities,
            num_relations,
            conve,
            store,
            norm,
        };
        if model.store.value(model.entity_table()).shape() != [num_entities, dim] {
            return Err(Error::config("entity table shape mismatch"));
        }
        if model.store.value(model.relation_table()).shape() != [num_relations, dim] {
            return Err(Error::config("relation table shape mismatch"));
        }
        if matches!(kind, KgeKind::ConvE) {
            if model.conve.is_none() {
                return Err(Error::config("ConvE checkpoint missing image shape"));
            }
            for name in ["conv_w", "fc_w", "bn0_gamma", "entity_bias"] {
                if model.store.id_of(name).is_none() {
                    return Err(Error::config(format!("checkpoint missing `{name}`")));
                }
            }
        }
        Ok(model)
    }

    fn entity_table(&self) -> ParamId {
        self.store.id_of("entity").unwrap()
    }

    fn relation_table(&self) -> ParamId {
        self.store.id_of("relation").unwrap()
    }

    fn conve_ids(&self) -> ConvEIds {
        let id = |n: &str| self.store.id_of(n).unwrap();
        ConvEIds {
            conv_w: id("conv_w"),
            conv_b: id("conv_b"),
            fc_w: id("fc_w"),
            fc_b: id("fc_b"),
            bn0: [id("bn0_gamma"), id("bn0_beta"), id("bn0_mean"), id("bn0_var")],
            bn1: [id("bn1_gamma"), id("bn1_beta"), id("bn1_mean"), id("bn1_var")],
            bn2: [id("bn2_gamma"), id("bn2_beta"), id("bn2_mean"), id("bn2_var")],
            entity_bias: id("entity_bias"),
        }
    }

    pub fn entity_embedding(&self, e: EntityId) -> &[R] {
        self.store.value(self.entity_table()).row(e)
    }

    /// Raw (pre-sigmoid) scores of every tail for the query (h, r).
    pub fn all_tail_scores(&self, head: EntityId, relation: RelationId) -> Vec<f64> {
        match self.kind {
            KgeKind::DistMult => {
                let ent = self.store.value(self.entity_table());
                let rel = self.store.value(self.relation_table());
                let h = ent.row(head);
                let r = rel.row(relation);
                let hr: Vec<f64> = h
                    .iter()
                    .zip(r.iter())
                    .map(|(&a, &b)| a.to_f64() * b.to_f64())
                    .collect();
                (0..self.num_entities)
                    .map(|t| {
                        ent.row(t)
                            .iter()
                            .zip(hr.iter())
                            .map(|(&tv, &hv)| tv.to_f64() * hv)
                            .sum()
                    })
                    .collect()
            }
            KgeKind::TransE => {
                let ent = self.store.value(self.entity_table());
                let rel = self.store.value(self.relation_table());
                let h = ent.row(head);
                let r = rel.row(relation);
                let hr: Vec<f64> = h
                    .iter()
                    .zip(r.iter())
                    .map(|(&a, &b)| a.to_f64() + b.to_f64())
                    .collect();
                (0..self.num_entities)
                    .map(|t| {
                        let trow = ent.row(t);
                        let d: f64 = if self.norm == 1 {
                            trow.iter()
                                .zip(hr.iter())
                                .map(|(&tv, &hv)| (hv - tv.to_f64()).abs())
                                .sum()
                        } else {
                            trow.iter()
                                .zip(hr.iter())
                                .map(|(&tv, &hv)| {
                                    let d = hv - tv.to_f64();
                                    d * d
                                })
                                .sum::<f64>()
                                .sqrt()
                        };
                        -d
                    })
                    .collect()
            }
            KgeKind::ConvE => {
                // Run the shared forward on a throwaway eval-mode tape over
                // a cloned store (eval mode never mutates running stats).
                let shape = self.conve.expect("conve shape");
                let ids = self.conve_ids();
                let mut store = self.store.clone();
                let mut tape = Tape::new(false);
                let mut rng = Rng::seed_from_u64(0);
                let logits = conve_forward(
                    &mut tape,
                    &mut store,
                    &shape,
                    &ids,
                    self.entity_table(),
                    self.relation_table(),
                    &[head],
                    &[relation],
                    &mut rng,
                )
                .expect("conve forward");
                tape.value(logits).row(0).iter().map(|x| x.to_f64()).collect()
            }
        }
    }

    /// All-tail score logits for a batch of (head, relation) queries on the
    /// given tape; the head used by 1-vs-all training. TransE trains with a
    /// margin loss and has no such head.
    pub fn batch_tail_logits(
        &mut self,
        tape: &mut Tape<R>,
        heads: &[usize],
        relations: &[usize],
        rng: &mut Rng,
    ) -> Result<crate::autodiff::NodeId> {
        match self.kind {
            KgeKind::DistMult => {
                let entity = self.entity_table();
                let relation = self.relation_table();
                let h = tape.lookup(&self.store, entity, heads);
                let r = tape.lookup(&self.store, relation, relations);
                let hr = tape.mul(h, r)?;
                let ent = tape.param(&self.store, entity);
                tape.matmul_nt(hr, ent)
            }
            KgeKind::ConvE => {
                let shape = self.conve.expect("conve shape");
                let ids = self.conve_ids();
                let entity = self.entity_table();
                let relation = self.relation_table();
                conve_forward(
                    tape,
                    &mut self.store,
                    &shape,
                    &ids,
                    entity,
                    relation,
                    heads,
                    relations,
                    rng,
                )
            }
            KgeKind::TransE => Err(Error::config(
                "TransE trains with margin loss, not 1-vs-all logits",
            )),
        }
    }

    pub fn raw_score(&self, head: EntityId, relation: RelationId, tail: EntityId) -> f64 {
        match self.kind {
            KgeKind::ConvE => self.all_tail_scores(head, relation)[tail],
            _ => {
                // Cheap direct forms for the shallow models.
                let ent = self.store.value(self.entity_table());
                let rel = self.store.value(self.relation_table());
                let h = ent.row(head);
                let r = rel.row(relation);
                let t = ent.row(tail);
                match self.kind {
                    KgeKind::DistMult => h
                        .iter()
                        .zip(r.iter())
                        .zip(t.iter())
                        .map(|((&a, &b), &c)| a.to_f64() * b.to_f64() * c.to_f64())
                        .sum(),
                    KgeKind::TransE => {
                        let d: f64 = if self.norm == 1 {
                            h.iter()
                                .zip(r.iter())
                                .zip(t.iter())
                                .map(|((&a, &b), &c)| (a.to_f64() + b.to_f64() - c.to_f64()).abs())
                                .sum()
                        } else {
                            h.iter()
                                .zip(r.iter())
                                .zip(t.iter())
                                .map(|((&a, &b), &c)| {
                                    let d = a.to_f64() + b.to_f64() - c.to_f64();
                                    d * d
                                })
                                .sum::<f64>()
                                .sqrt()
                        };
                        -d
                    }
                    KgeKind::ConvE => unreachable!(),
                }
            }
        }
    }

    /// Sigmoid-squashed triple score, clamped strictly inside (0, 1).
    pub fn score(&self, head: EntityId, relation: RelationId, tail: EntityId) -> f64 {
        squash(self.raw_score(head, relation, tail))
    }

    /// Softmax distribution over all tail entities for (h, r).
    pub fn tail_distribution(&self, head: EntityId, relation: RelationId) -> Vec<f64> {
        softmax_f64(&self.all_tail_scores(head, relation))
    }

    /// Top-k tails by probability, descending, ties broken by entity id.
    pub fn top_k_tails(
        &self,
        head: EntityId,
        relation: RelationId,
        k: usize,
    ) -> Vec<(EntityId, f64)> {
        top_k_from_raw(&self.all_tail_scores(head, relation), k)
    }
}

pub(crate) fn squash(raw: f64) -> f64 {
    let s = 1.0 / (1.0 + libm::exp(-raw));
    s.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP)
}

pub(crate) fn softmax_f64(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw.iter().map(|&x| libm::exp(x - max)).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn top_k_from_raw(raw: &[f64], k: usize) -> Vec<(EntityId, f64)> {
    let probs = softmax_f64(raw);
    let mut order: Vec<EntityId> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| raw[b].total_cmp(&raw[a]).then(a.cmp(&b)));
    order
        .into_iter()
        .take(k.min(raw.len()))
        .map(|e| (e, probs[e]))
        .collect()
}

/// Memo for repeated tail-score queries against a frozen model; rollouts
/// and beam search hit the same (entity, relation) pairs constantly.
pub struct ScoreCache<'m, R: Real> {
    model: &'m KgeModel<R>,
    raw: BTreeMap<(EntityId, RelationId), Vec<f64>>,
}

impl<'m, R: Real> ScoreCache<'m, R> {
    pub fn new(model: &'m KgeModel<R>) -> Self {
        ScoreCache {
            model,
            raw: BTreeMap::new(),
        }
    }

    pub fn model(&self) -> &'m KgeModel<R> {
        self.model
    }

    fn raw_scores(&mut self, head: EntityId, relation: RelationId) -> &Vec<f64> {
        self.raw
            .entry((head, relation))
            .or_insert_with(|| self.model.all_tail_scores(head, relation))
    }

    pub fn score(&mut self, head: EntityId, relation: RelationId, tail: EntityId) -> f64 {
        squash(self.raw_scores(head, relation)[tail])
    }

    pub fn tail_distribution(&mut self, head: EntityId, relation: RelationId) -> Vec<f64> {
        softmax_f64(self.raw_scores(head, relation))
    }

    pub fn top_k_tails(
        &mut self,
        head: EntityId,
        relation: RelationId,
        k: usize,
    ) -> Vec<(EntityId, f64)> {
        top_k_from_raw(self.raw_scores(head, relation), k)
    }

    pub fn clear(&mut self) {
        self.raw.clear();
    }
}

/// Train a score model on the graph's train split (with inverse triples).
/// Keeps the best-valid-MRR snapshot when evaluation is enabled.
pub fn train_kge<R: Real>(
    kg: &KnowledgeGraph,
    cfg: &KgeConfig,
) -> Result<(KgeModel<R>, Vec<KgeEpoch>)> {
    let mut rng = Rng::seed_from_u64(cfg.seed);
    let mut model = KgeModel::new(
        cfg.kind,
        kg.vocab().entity_count(),
        kg.vocab().relation_count(),
        cfg.dim,
        cfg.conve,
        &mut rng,
    )?;
    let mut adam = Adam::new(cfg.lr);

    // Train triples plus inverses.
    let mut edges: Vec<Triple> = Vec::with_capacity(2 * kg.split(Split::Train).len());
    for t in kg.split(Split::Train) {
        edges.push(*t);
        edges.push(Triple {
            head: t.tail,
            relation: kg.vocab().inverse_of(t.relation),
            tail: t.head,
        });
    }
    if edges.is_empty() {
        return Err(Error::train("no training triples"));
    }

    let mut reports = Vec::new();
    let mut best: Option<(f64, Vec<Tensor<R>>)> = None;
    let mut stale_evals = 0usize;

    match cfg.kind {
        KgeKind::TransE => {
            let mut order: Vec<usize> = (0..edges.len()).collect();
            for epoch in 0..cfg.epochs {
                rng.shuffle(&mut order);
                let mut epoch_loss = 0.0;
                let mut batches = 0usize;
                for chunk in order.chunks(cfg.batch_size.max(1)) {
                    let loss = transe_batch(&mut model, &edges, chunk, cfg, &mut adam, &mut rng)?;
                    epoch_loss += loss;
                    batches += 1;
                }
                let loss = epoch_loss / batches.max(1) as f64;
                finish_epoch(
                    kg, &mut model, cfg, epoch, loss, &mut reports, &mut best,
                    &mut stale_evals,
                )?;
                if cfg.patience > 0 && stale_evals > cfg.patience {
                    break;
                }
            }
        }
        KgeKind::DistMult | KgeKind::ConvE => {
            // 1-vs-all: unique (head, relation) queries with multi-hot tails.
            let mut tails: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
            for t in &edges {
                tails.entry((t.head, t.relation)).or_default().insert(t.tail);
            }
            let pairs: Vec<((usize, usize), Vec<usize>)> = tails
                .into_iter()
                .map(|(k, v)| (k, v.into_iter().collect()))
                .collect();
            let mut order: Vec<usize> = (0..pairs.len()).collect();
            for epoch in 0..cfg.epochs {
                rng.shuffle(&mut order);
                let mut epoch_loss = 0.0;
                let mut batches = 0usize;
                for chunk in order.chunks(cfg.batch_size.max(1)) {
                    let loss = one_vs_all_batch(&mut model, &pairs, chunk, cfg, &mut adam, &mut rng)?;
                    epoch_loss += loss;
                    batches += 1;
                }
                let loss = epoch_loss / batches.max(1) as f64;
                finish_epoch(
                    kg, &mut model, cfg, epoch, loss, &mut reports, &mut best,
                    &mut stale_evals,
                )?;
                if cfg.patience > 0 && stale_evals > cfg.patience {
                    break;
                }
            }
        }
    }

    if let Some((_, snapshot)) = best {
        model.store.restore(&snapshot);
    }
    Ok((model, reports))
}

#[allow(clippy::too_many_arguments)]
fn finish_epoch<R: Real>(
    kg: &KnowledgeGraph,
    model: &mut KgeModel<R>,
    cfg: &KgeConfig,
    epoch: usize,
    loss: f64,
    reports: &mut Vec<KgeEpoch>,
    best: &mut Option<(f64, Vec<Tensor<R>>)>,
    stale: &mut usize,
) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::train(format!(
            "{:?} diverged at epoch {epoch}: loss {loss}",
            cfg.kind
        )));
    }
    let evaluate = cfg.eval_every > 0
        && !kg.split(Split::Valid).is_empty()
        && (epoch + 1) % cfg.eval_every == 0;
    let valid_mrr = if evaluate {
        let mrr = kge_filtered_mrr(model, kg, Split::Valid);
        match best {
            Some((b, _)) if *b >= mrr => *stale += 1,
            _ => {
                *best = Some((mrr, model.store.snapshot()));
                *stale = 0;
            }
        }
        Some(mrr)
    } else {
        None
    };
    reports.push(KgeEpoch {
        epoch,
        loss,
        valid_mrr,
    });
    Ok(())
}

fn transe_batch<R: Real>(
    model: &mut KgeModel<R>,
    edges: &[Triple],
    chunk: &[usize],
    cfg: &KgeConfig,
    adam: &mut Adam<R>,
    rng: &mut Rng,
) -> Result<f64> {
    let entity = model.entity_table();
    let relation = model.relation_table();
    let n_neg = cfg.negatives.max(1);
    let mut heads = Vec::with_capacity(chunk.len() * n_neg);
    let mut rels = Vec::with_capacity(chunk.len() * n_neg);
    let mut tails = Vec::with_capacity(chunk.len() * n_neg);
    let mut neg_tails = Vec::with_capacity(chunk.len() * n_neg);
    for &i in chunk {
        let t = edges[i];
        for _ in 0..n_neg {
            heads.push(t.head);
            rels.push(t.relation);
            tails.push(t.tail);
            // Corrupt the tail; a couple of retries keeps most corruptions
            // off true facts without biasing the sampler much.
            let mut neg = rng.below(model.num_entities);
            for _ in 0..10 {
                if neg != t.tail {
                    break;
                }
                neg = rng.below(model.num_entities);
            }
            neg_tails.push(neg);
        }
    }

    model.store.zero_grads();
    let mut tape = Tape::new(true);
    let h = tape.lookup(&model.store, entity, &heads);
    let r = tape.lookup(&model.store, relation, &rels);
    let t = tape.lookup(&model.store, entity, &tails);
    let neg = tape.lookup(&model.store, entity, &neg_tails);
    let hr = tape.add(h, r)?;
    let pos_diff = tape.sub(hr, t)?;
    let neg_diff = tape.sub(hr, neg)?;
    let (pos_d, neg_d) = if cfg.norm == 1 {
        let pa = tape.abs_op(pos_diff);
        let na = tape.abs_op(neg_diff);
        (tape.sum_last(pa), tape.sum_last(na))
    } else {
        let ps = tape.square(pos_diff);
        let ns = tape.square(neg_diff);
        let psum = tape.sum_last(ps);
        let nsum = tape.sum_last(ns);
        (tape.sqrt_guarded(psum), tape.sqrt_guarded(nsum))
    };
    let margin = tape.neg(neg_d);
    let margin = tape.add(pos_d, margin)?;
    let margin = tape.add_scalar(margin, R::from_f64(cfg.margin));
    let hinge = tape.relu(margin);
    let loss = tape.mean_all(hinge);
    let loss_val = tape.value(loss).scalar_value().to_f64();
    tape.backward(loss, &mut model.store)?;
    adam.step(&mut model.store);
    normalize_entity_rows(&mut model.store, entity);
    Ok(loss_val)
}

fn normalize_entity_rows<R: Real>(store: &mut ParamStore<R>, entity: ParamId) {
    let table = store.value_mut(entity);
    for r in 0..table.rows() {
        let row = table.row_mut(r);
        let norm = row
            .iter()
            .map(|&v| v.to_f64() * v.to_f64())
            .sum::<f64>()
            .sqrt();
        if norm > 1e-12 {
            let inv = R::from_f64(1.0 / norm);
            for v in row {
                *v *= inv;
            }
        }
    }
}

fn one_vs_all_batch<R: Real>(
    model: &mut KgeModel<R>,
    pairs: &[((usize, usize), Vec<usize>)],
    chunk: &[usize],
    cfg: &KgeConfig,
    adam: &mut Adam<R>,
    rng: &mut Rng,
) -> Result<f64> {
    let b = chunk.len();
    let e = model.num_entities;
    let heads: Vec<usize> = chunk.iter().map(|&i| pairs[i].0 .0).collect();
    let rels: Vec<usize> = chunk.iter().map(|&i| pairs[i].0 .1).collect();

    let smooth_on = R::from_f64(1.0 - cfg.label_smoothing + cfg.label_smoothing / e as f64);
    let smooth_off = R::from_f64(cfg.label_smoothing / e as f64);
    let mut targets = Tensor::full(&[b, e], smooth_off);
    for (row, &i) in chunk.iter().enumerate() {
        for &t in &pairs[i].1 {
            targets.row_mut(row)[t] = smooth_on;
        }
    }

    model.store.zero_grads();
    let mut tape = Tape::new(true);
    let logits = model.batch_tail_logits(&mut tape, &heads, &rels, rng)?;
    let loss = tape.bce_with_logits(logits, &targets)?;
    let loss_val = tape.value(loss).scalar_value().to_f64();
    tape.backward(loss, &mut model.store)?;
    adam.step(&mut model.store);
    Ok(loss_val)
}

#[allow(clippy::too_many_arguments)]
fn conve_forward<R: Real>(
    tape: &mut Tape<R>,
    store: &mut ParamStore<R>,
    shape: &ConvEShape,
    ids: &ConvEIds,
    entity: ParamId,
    relation: ParamId,
    heads: &[usize],
    relations: &[usize],
    rng: &mut Rng,
) -> Result<crate::autodiff::NodeId> {
    let b = heads.len();
    let h = tape.lookup(store, entity, heads);
    let r = tape.lookup(store, relation, relations);
    // (B, 2d) row-major is exactly the stacked (B, 1, 2*rows, cols) image.
    let cat = tape.concat_last(&[h, r])?;
    let img = tape.reshape(cat, &[b, 1, 2 * shape.rows, shape.cols])?;
    let img = tape.batch_norm(
        store,
        img,
        ids.bn0[0],
        ids.bn0[1],
        ids.bn0[2],
        ids.bn0[3],
        BnAxes::PerChannel,
        0.1,
        1e-5,
    )?;
    let img = tape.dropout(img, shape.input_dropout, rng);
    let conv_w = tape.param(store, ids.conv_w);
    let conv_b = tape.param(store, ids.conv_b);
    let feat = tape.conv2d(img, conv_w, Some(conv_b))?;
    let feat = tape.batch_norm(
        store,
        feat,
        ids.bn1[0],
        ids.bn1[1],
        ids.bn1[2],
        ids.bn1[3],
        BnAxes::PerChannel,
        0.1,
        1e-5,
    )?;
    let feat = tape.relu(feat);
    let feat = tape.dropout(feat, shape.feature_dropout, rng);
    let flat = tape.reshape(feat, &[b, shape.feature_len()])?;
    let hid = tape.linear(store, flat, ids.fc_w, Some(ids.fc_b))?;
    let hid = tape.dropout(hid, shape.hidden_dropout, rng);
    let hid = tape.batch_norm(
        store,
        hid,
        ids.bn2[0],
        ids.bn2[1],
        ids.bn2[2],
        ids.bn2[3],
        BnAxes::PerFeature,
        0.1,
        1e-5,
    )?;
    let hid = tape.relu(hid);
    let ent = tape.param(store, entity);
    let scores = tape.matmul_nt(hid, ent)?;
    let bias = tape.param(store, ids.entity_bias);
    tape.add_row(scores, bias)
}

/// Filtered tail-ranking MRR of a score model on a split.
pub fn kge_filtered_mrr<R: Real>(model: &KgeModel<R>, kg: &KnowledgeGraph, split: Split) -> f64 {
    let triples = kg.split(split);
    if triples.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for t in triples {
        let scores = model.all_tail_scores(t.head, t.relation);
        let known = kg.filter_candidates(t.head, t.relation);
        let gold = scores[t.tail];
        let mut rank = 1usize;
        for (e, &s) in scores.iter().enumerate() {
            if e == t.tail || known.contains(&e) {
                continue;
            }
            if s > gold || (s == gold && e < t.tail) {
                rank += 1;
            }
        }
        total += 1.0 / rank as f64;
    }
    total / triples.len() as f64
}
