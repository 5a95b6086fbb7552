//! The walker's policy network.
//!
//! History is a stacked LSTM over chosen actions; the state vector
//! concatenates an optional anticipation embedding (a frozen prediction
//! vector from the score model), the query relation, the current entity
//! and the LSTM output. Actions are scored by dotting `[relation; entity]`
//! embedding rows against a two-layer MLP transform of the state.
//!
//! Dynamic completion proposes extra actions: an attention head over base
//! relations picks which relations to probe, the frozen score model ranks
//! tails for each, and the best proposals that are not already graph edges
//! are appended to the action space. Selection is discrete, so the policy
//! gradient never flows into the score model.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{LstmLayer, NodeId, ParamId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::kg::{Action, EntityId, KnowledgeGraph, Origin, RelationId};
use crate::kge::ScoreCache;
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnticipationStrategy {
    Off,
    Sample,
    TopOne,
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionConfig {
    /// Proportion of the current action-space size to add (0 disables).
    pub alpha: f64,
    /// Hard cap on added actions.
    pub max_added: usize,
    /// Tails kept per probed relation.
    pub tails_per_relation: usize,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        CompletionConfig {
            alpha: 0.33,
            max_added: 20,
            tails_per_relation: 2,
        }
    }
}

impl CompletionConfig {
    pub fn off() -> Self {
        CompletionConfig {
            alpha: 0.0,
            max_added: 20,
            tails_per_relation: 2,
        }
    }

    pub fn enabled(&self) -> bool {
        self.alpha > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!(
                "completion alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if self.enabled() && (self.max_added == 0 || self.tails_per_relation == 0) {
            return Err(Error::config(
                "completion needs max_added >= 1 and tails_per_relation >= 1",
            ));
        }
        Ok(())
    }
}

/// Number of actions to add for a state with `n` current actions:
/// min(ceil(alpha * n), cap).
pub fn added_action_budget(n: usize, alpha: f64, cap: usize) -> usize {
    if alpha <= 0.0 || n == 0 {
        return 0;
    }
    // Nudge below the product before ceiling so exact multiples are not
    // pushed up by float noise (0.2 * 5 must stay 1).
    let raw = libm::ceil(alpha * n as f64 - 1e-9) as usize;
    raw.min(cap)
}

/// Number of relations to probe so that `tails_per_relation` tails each can
/// fill the budget: ceil(budget / k).
pub fn relations_to_probe(budget: usize, tails_per_relation: usize) -> usize {
    if budget == 0 {
        return 0;
    }
    budget.div_ceil(tails_per_relation.max(1))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub dim: usize,
    pub hidden: usize,
    pub lstm_layers: usize,
    pub anticipation: AnticipationStrategy,
    pub completion: CompletionConfig,
    /// Random masking rate for graph actions during training rollouts
    /// (0 disables; the self-loop is never masked).
    pub action_dropout: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            dim: 200,
            hidden: 200,
            lstm_layers: 3,
            anticipation: AnticipationStrategy::Sample,
            completion: CompletionConfig::default(),
            action_dropout: 0.0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hidden == 0 || self.lstm_layers == 0 {
            return Err(Error::config("policy dims must be positive"));
        }
        if !(0.0..1.0).contains(&self.action_dropout) {
            return Err(Error::config("action_dropout must be in [0, 1)"));
        }
        self.completion.validate()
    }
}

/// Tape handles for the per-layer LSTM state of an episode batch.
#[derive(Debug, Clone)]
pub struct PathEncoding {
    pub layers: Vec<(NodeId, NodeId)>,
    /// Top-layer hidden state (B, hidden).
    pub top: NodeId,
}

#[derive(Debug, Clone)]
pub struct PolicyNetwork<R> {
    pub cfg: PolicyConfig,
    pub num_entities: usize,
    /// Augmented relation count (base + inverses + LOOP).
    pub num_relations: usize,
    pub store: ParamStore<R>,
    entity_table: ParamId,
    relation_table: ParamId,
    lstm: Vec<LstmLayer>,
    score_in_w: ParamId,
    score_in_b: ParamId,
    score_out_w: ParamId,
    score_out_b: ParamId,
    comp_in_w: ParamId,
    comp_in_b: ParamId,
    comp_out_w: ParamId,
    comp_out_b: ParamId,
}

impl<R: Real> PolicyNetwork<R> {
    pub fn new(
        num_entities: usize,
        num_relations: usize,
        cfg: PolicyConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        if num_entities == 0 || num_relations == 0 {
            return Err(Error::config("empty vocabulary"));
        }
        let d = cfg.dim;
        let hidden = cfg.hidden;
        let state_dim = Self::state_dim_for(&cfg);
        let mut store = ParamStore::new();
        let entity_table = store.insert("entity", Tensor::xavier(&[num_entities, d], rng), true)?;
        // One extra relation row acts as the path-start token.
        let relation_table = store.insert(
            "relation",
            Tensor::xavier(&[num_relations + 1, d], rng),
            true,
        )?;
        let mut lstm = Vec::with_capacity(cfg.lstm_layers);
        for layer in 0..cfg.lstm_layers {
            let input = if layer == 0 { 2 * d } else { hidden };
            let w_ih = store.insert(
                &format!("lstm{layer}_w_ih"),
                Tensor::xavier(&[4 * hidden, input], rng),
                true,
            )?;
            let w_hh = store.insert(
                &format!("lstm{layer}_w_hh"),
                Tensor::xavier(&[4 * hidden, hidden], rng),
                true,
            )?;
            let mut bias = Tensor::zeros(&[4 * hidden]);
            // Forget-gate slice starts open.
            for k in hidden..2 * hidden {
                bias.data_mut()[k] = R::ONE;
            }
            let bias = store.insert(&format!("lstm{layer}_bias"), bias, true)?;
            lstm.push(LstmLayer { w_ih, w_hh, bias });
        }
        let score_in_w =
            store.insert("score_in_w", Tensor::xavier(&[2 * d, state_dim], rng), true)?;
        let score_in_b = store.insert("score_in_b", Tensor::zeros(&[2 * d]), true)?;
        let score_out_w =
            store.insert("score_out_w", Tensor::xavier(&[2 * d, 2 * d], rng), true)?;
        let score_out_b = store.insert("score_out_b", Tensor::zeros(&[2 * d]), true)?;
        let comp_in_w = store.insert("comp_in_w", Tensor::xavier(&[d, state_dim], rng), true)?;
        let comp_in_b = store.insert("comp_in_b", Tensor::zeros(&[d]), true)?;
        let comp_out_w = store.insert("comp_out_w", Tensor::xavier(&[d, d], rng), true)?;
        let comp_out_b = store.insert("comp_out_b", Tensor::zeros(&[d]), true)?;
        Ok(PolicyNetwork {
            cfg,
            num_entities,
            num_relations,
            store,
            entity_table,
            relation_table,
            lstm,
            score_in_w,
            score_in_b,
            score_out_w,
            score_out_b,
            comp_in_w,
            comp_in_b,
            comp_out_w,
            comp_out_b,
        })
    }

    /// Rebuild a network around a restored parameter store (checkpoint
    /// load). Parameter names and shapes must match what `new` creates.
    pub fn from_parts(
        num_entities: usize,
        num_relations: usize,
        cfg: PolicyConfig,
        store: ParamStore<R>,
    ) -> Result<Self> {
        cfg.validate()?;
        let need = |name: &str| {
            store
                .id_of(name)
                .ok_or_else(|| Error::config(format!("checkpoint missing `{name}`")))
        };
        let entity_table = need("entity")?;
        let relation_table = need("relation")?;
        if store.value(entity_table).shape() != [num_entities, cfg.dim] {
            return Err(Error::config("entity table shape mismatch"));
        }
        if store.value(relation_table).shape() != [num_relations + 1, cfg.dim] {
            return Err(Error::config("relation table shape mismatch"));
        }
        let mut lstm = Vec::with_capacity(cfg.lstm_layers);
        for layer in 0..cfg.lstm_layers {
            lstm.push(LstmLayer {
                w_ih: need(&format!("lstm{layer}_w_ih"))?,
                w_hh: need(&format!("lstm{layer}_w_hh"))?,
                bias: need(&format!("lstm{layer}_bias"))?,
            });
        }
        Ok(PolicyNetwork {
            score_in_w: need("score_in_w")?,
            score_in_b: need("score_in_b")?,
            score_out_w: need("score_out_w")?,
            score_out_b: need("score_out_b")?,
            comp_in_w: need("comp_in_w")?,
            comp_in_b: need("comp_in_b")?,
            comp_out_w: need("comp_out_w")?,
            comp_out_b: need("comp_out_b")?,
            cfg,
            num_entities,
            num_relations,
            store,
            entity_table,
            relation_table,
            lstm,
        })
    }

    fn state_dim_for(cfg: &PolicyConfig) -> usize {
        let base = 2 * cfg.dim + cfg.hidden;
        if matches!(cfg.anticipation, AnticipationStrategy::Off) {
            base
        } else {
            base + cfg.dim
        }
    }

    /// Dimension of the encoded state vector: 2d + hidden, plus d when
    /// anticipation is on.
    pub fn state_dim(&self) -> usize {
        Self::state_dim_for(&self.cfg)
    }

    /// Relation id of the path-start token (one past the augmented vocab).
    pub fn start_relation(&self) -> RelationId {
        self.num_relations
    }

    pub fn uses_anticipation(&self) -> bool {
        !matches!(self.cfg.anticipation, AnticipationStrategy::Off)
    }

    /// Initialize the history encoder for a batch of episodes by feeding
    /// the start token [start_relation; start_entity] from zero states.
    pub fn begin(&self, tape: &mut Tape<R>, starts: &[EntityId]) -> Result<PathEncoding> {
        let b = starts.len();
        let start_rels = vec![self.start_relation(); b];
        let zero = Tensor::zeros(&[b, self.cfg.hidden]);
        let states: Vec<(NodeId, NodeId)> = (0..self.cfg.lstm_layers)
            .map(|_| (tape.constant(zero.clone()), tape.constant(zero.clone())))
            .collect();
        self.advance_from(tape, &states, &start_rels, starts)
    }

    /// Feed the chosen actions into the history LSTM.
    pub fn advance(
        &self,
        tape: &mut Tape<R>,
        prev: &PathEncoding,
        relations: &[RelationId],
        entities: &[EntityId],
    ) -> Result<PathEncoding> {
        self.advance_from(tape, &prev.layers, relations, entities)
    }

    fn advance_from(
        &self,
        tape: &mut Tape<R>,
        states: &[(NodeId, NodeId)],
        relations: &[RelationId],
        entities: &[EntityId],
    ) -> Result<PathEncoding> {
        let r = tape.lookup(&self.store, self.relation_table, relations);
        let e = tape.lookup(&self.store, self.entity_table, entities);
        let action = tape.concat_last(&[r, e])?;
        let (layers, top) = tape.lstm_step(&self.store, action, states, &self.lstm)?;
        Ok(PathEncoding { layers, top })
    }

    /// Rebuild a batch's encoder state from stored values (inference
    /// re-enters the tape each step; see beam search).
    pub fn encoding_from_values(
        &self,
        tape: &mut Tape<R>,
        layers: Vec<(Tensor<R>, Tensor<R>)>,
    ) -> PathEncoding {
        let layers: Vec<(NodeId, NodeId)> = layers
            .into_iter()
            .map(|(h, c)| (tape.constant(h), tape.constant(c)))
            .collect();
        let top = layers.last().expect("at least one layer").0;
        PathEncoding { layers, top }
    }

    /// Encode the per-episode state vectors: [anticipation?; query relation;
    /// current entity; history]. The anticipation block is a constant.
    pub fn encode_states(
        &self,
        tape: &mut Tape<R>,
        history_top: NodeId,
        query_relations: &[RelationId],
        currents: &[EntityId],
        anticipation: Option<&Tensor<R>>,
    ) -> Result<NodeId> {
        let r = tape.lookup(&self.store, self.relation_table, query_relations);
        let e = tape.lookup(&self.store, self.entity_table, currents);
        match (self.uses_anticipation(), anticipation) {
            (true, Some(a)) => {
                let a = tape.constant(a.clone());
                tape.concat_last(&[a, r, e, history_top])
            }
            (true, None) => Err(Error::config("anticipation enabled but no vector supplied")),
            (false, _) => tape.concat_last(&[r, e, history_top]),
        }
    }

    /// State transform for action scoring: out_w * relu(in_w * s + in_b) + out_b.
    fn score_transform(&self, tape: &mut Tape<R>, state: NodeId) -> Result<NodeId> {
        let h = tape.linear(&self.store, state, self.score_in_w, Some(self.score_in_b))?;
        let h = tape.relu(h);
        tape.linear(&self.store, h, self.score_out_w, Some(self.score_out_b))
    }

    /// Probability distribution over a padded action grid. `relations` and
    /// `entities` are (B * width) slot ids; `mask` marks real actions.
    pub fn score_actions(
        &self,
        tape: &mut Tape<R>,
        state: NodeId,
        relations: &[RelationId],
        entities: &[EntityId],
        width: usize,
        mask: &[bool],
    ) -> Result<NodeId> {
        if width == 0 {
            return Err(Error::shape("score_actions", "empty action space".into()));
        }
        let b = relations.len() / width;
        let u = self.score_transform(tape, state)?;
        let r = tape.lookup(&self.store, self.relation_table, relations);
        let e = tape.lookup(&self.store, self.entity_table, entities);
        let rows = tape.concat_last(&[r, e])?;
        let grid = tape.reshape(rows, &[b, width, 2 * self.cfg.dim])?;
        let logits = tape.score_rows(grid, u)?;
        tape.masked_softmax(logits, mask)
    }

    /// Attention over base relations (completion candidates): softmax of
    /// MLP(state) dotted with every relation embedding, inverses/LOOP/start
    /// masked out. Returns the node; values drive the discrete top-x pick.
    pub fn relation_attention(
        &self,
        tape: &mut Tape<R>,
        state: NodeId,
        base_relations: usize,
    ) -> Result<NodeId> {
        let b = tape.value(state).rows();
        let v = tape.linear(&self.store, state, self.comp_in_w, Some(self.comp_in_b))?;
        let v = tape.relu(v);
        let v = tape.linear(&self.store, v, self.comp_out_w, Some(self.comp_out_b))?;
        let table = tape.param(&self.store, self.relation_table);
        let logits = tape.matmul_nt(v, table)?;
        let total = self.num_relations + 1;
        let mut mask = vec![false; b * total];
        for row in 0..b {
            for rel in 0..base_relations {
                mask[row * total + rel] = true;
            }
        }
        tape.masked_softmax(logits, &mask)
    }

    /// Propose completion actions for one state from its relation-attention
    /// row. Proposals never duplicate stored train edges, are deduplicated,
    /// and are truncated to the budget of `added_action_budget`.
    pub fn propose_completions(
        &self,
        attention: &[f64],
        current: EntityId,
        action_count: usize,
        kg: &KnowledgeGraph,
        cache: &mut ScoreCache<'_, R>,
    ) -> Vec<Action> {
        let cfg = &self.cfg.completion;
        let budget = added_action_budget(action_count, cfg.alpha, cfg.max_added);
        if budget == 0 {
            return Vec::new();
        }
        let probe = relations_to_probe(budget, cfg.tails_per_relation);
        let base = kg.vocab().base_relation_count();
        debug_assert!(attention.len() >= base);
        let mut rel_order: Vec<RelationId> = (0..base).collect();
        rel_order.sort_by(|&a, &b| attention[b].total_cmp(&attention[a]).then(a.cmp(&b)));
        let mut proposals: Vec<Action> = Vec::with_capacity(budget);
        for &rel in rel_order.iter().take(probe) {
            for (tail, _) in cache.top_k_tails(current, rel, cfg.tails_per_relation) {
                if kg.has_train_edge(current, rel, tail) {
                    continue;
                }
                if proposals
                    .iter()
                    .any(|a| a.relation == rel && a.entity == tail)
                {
                    continue;
                }
                proposals.push(Action {
                    relation: rel,
                    entity: tail,
                    origin: Origin::Completion,
                });
            }
        }
        proposals.truncate(budget);
        proposals
    }
}

/// Build the anticipation vector from a tail distribution over entities and
/// an embedding accessor. The result is a detached constant to the policy.
pub fn anticipation_vector<R: Real>(
    strategy: AnticipationStrategy,
    distribution: &[f64],
    dim: usize,
    embedding: impl Fn(EntityId) -> Vec<R>,
    rng: &mut Rng,
) -> Tensor<R> {
    match strategy {
        AnticipationStrategy::Off => Tensor::zeros(&[dim]),
        AnticipationStrategy::Sample => {
            let idx = rng.pick_weighted(distribution);
            Tensor::from_vec(&[dim], embedding(idx)).expect("embedding width")
        }
        AnticipationStrategy::TopOne => {
            let mut best = 0usize;
            for (i, &p) in distribution.iter().enumerate() {
                if p > distribution[best] {
                    best = i;
                }
            }
            Tensor::from_vec(&[dim], embedding(best)).expect("embedding width")
        }
        AnticipationStrategy::Average => {
            let mut acc = vec![R::ZERO; dim];
            for (i, &p) in distribution.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let w = R::from_f64(p);
                for (slot, v) in acc.iter_mut().zip(embedding(i)) {
                    *slot += w * v;
                }
            }
            Tensor::from_vec(&[dim], acc).expect("embedding width")
        }
    }
}

/// Anticipation vector for a query against a frozen score model.
pub fn anticipate<R: Real>(
    cache: &mut ScoreCache<'_, R>,
    head: EntityId,
    relation: RelationId,
    strategy: AnticipationStrategy,
    rng: &mut Rng,
) -> Tensor<R> {
    let model = cache.model();
    if matches!(strategy, AnticipationStrategy::Off) {
        return Tensor::zeros(&[model.dim]);
    }
    let p = cache.tail_distribution(head, relation);
    anticipation_vector(strategy, &p, model.dim, |e| model.entity_embedding(e).to_vec(), rng)
}


#[cfg(test)]
mod invariant_tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn action_permutation_permutes_probabilities() {
        let mut rng = Rng::seed_from_u64(17);
        let policy: PolicyNetwork<f64> = PolicyNetwork::new(
            6,
            5,
            PolicyConfig {
                dim: 4,
                hidden: 4,
                lstm_layers: 1,
                anticipation: AnticipationStrategy::Off,
                completion: CompletionConfig::off(),
                action_dropout: 0.0,
            },
            &mut rng,
        )
        .unwrap();
        let mut tape = Tape::new(false);
        let enc = policy.begin(&mut tape, &[0]).unwrap();
        let s = policy.encode_states(&mut tape, enc.top, &[1], &[0], None).unwrap();
        let rels = [0usize, 2, 4];
        let ents = [1usize, 3, 5];
        let p1 = policy
            .score_actions(&mut tape, s, &rels, &ents, 3, &[true; 3])
            .unwrap();
        let p1 = tape.value(p1).data().to_vec();
        // Same actions, rotated order.
        let rels2 = [4usize, 0, 2];
        let ents2 = [5usize, 1, 3];
        let p2 = policy
            .score_actions(&mut tape, s, &rels2, &ents2, 3, &[true; 3])
            .unwrap();
        let p2 = tape.value(p2).data().to_vec();
        assert!((p1[0] - p2[1]).abs() < 1e-12);
        assert!((p1[1] - p2[2]).abs() < 1e-12);
        assert!((p1[2] - p2[0]).abs() < 1e-12);
    }

    #[test]
    fn gradients_reach_lstm_mlp_and_tables() {
        let mut rng = Rng::seed_from_u64(23);
        let policy: PolicyNetwork<f64> = PolicyNetwork::new(
            6,
            5,
            PolicyConfig {
                dim: 3,
                hidden: 3,
                lstm_layers: 2,
                anticipation: AnticipationStrategy::Off,
                completion: CompletionConfig::off(),
                action_dropout: 0.0,
            },
            &mut rng,
        )
        .unwrap();
        let mut store = policy.store.clone();
        let mut tape = Tape::new(true);
        let enc = policy.begin(&mut tape, &[0, 2]).unwrap();
        // One more encoder step so the recurrent weights see a nonzero
        // hidden state and can receive gradient.
        let enc = policy.advance(&mut tape, &enc, &[1, 0], &[3, 4]).unwrap();
        let s = policy
            .encode_states(&mut tape, enc.top, &[0, 1], &[3, 4], None)
            .unwrap();
        let probs = policy
            .score_actions(&mut tape, s, &[0, 1, 3, 2], &[1, 4, 0, 5], 2, &[true; 4])
            .unwrap();
        let lp = tape.log_guarded(probs);
        let picked = tape.gather_rows(lp, &[1, 0]).unwrap();
        let loss = tape.sum_all(picked);
        store.zero_grads();
        tape.backward(loss, &mut store).unwrap();
        for name in [
            "entity",
            "relation",
            "lstm0_w_ih",
            "lstm0_w_hh",
            "lstm1_w_ih",
            "score_in_w",
            "score_out_w",
        ] {
            let id = store.id_of(name).unwrap();
            assert!(
                store.grad(id).data().iter().any(|&g| g != 0.0),
                "no gradient reached `{name}`"
            );
        }
    }
}
