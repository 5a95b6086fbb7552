//! The walk environment: fixed-horizon episodes over the graph.
//!
//! Episodes always run exactly `max_hops` steps; staying put is expressed
//! through the always-present self-loop action, so "stopping early" is just
//! a sequence of loops. Action spaces are the graph's stored edges plus the
//! self-loop plus any completion-injected actions, with the query triple's
//! own edges masked out during training so the walker cannot read off the
//! answer.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{Action, ActionSpace, EntityId, KnowledgeGraph, Origin, RelationId};
use crate::kge::ScoreCache;
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Query {
    pub head: EntityId,
    pub relation: RelationId,
}

/// When to hide the query triple's own edges (the direct edge and its
/// stored inverse) from the walker's action spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldMask {
    Never,
    FirstStep,
    EveryStep,
}

/// Per-episode state. The history tensor mirrors the policy LSTM's top
/// hidden state for this episode; the anticipation vector is fixed for the
/// whole episode (zeros when the strategy is off).
#[derive(Debug, Clone)]
pub struct AgentState<R> {
    pub query: Query,
    pub step: usize,
    pub current: EntityId,
    pub history: Tensor<R>,
    pub anticipation: Tensor<R>,
}

impl<R: Real> AgentState<R> {
    pub fn reset(query: Query, hidden: usize, anticipation: Tensor<R>) -> Self {
        AgentState {
            query,
            step: 0,
            current: query.head,
            history: Tensor::zeros(&[hidden]),
            anticipation,
        }
    }
}

/// One chosen hop of an episode.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub relation: RelationId,
    pub entity: EntityId,
    pub origin: Origin,
    pub log_prob: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpisodeTrace {
    pub head: EntityId,
    pub relation: RelationId,
    pub gold: EntityId,
    pub steps: Vec<StepRecord>,
    pub terminal: EntityId,
    pub reward: f64,
    pub hit: bool,
}

impl EpisodeTrace {
    /// Fraction of chosen actions that were completion-injected.
    pub fn completion_share(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        let hits = self
            .steps
            .iter()
            .filter(|s| s.origin == Origin::Completion)
            .count();
        hits as f64 / self.steps.len() as f64
    }
}

/// Does the gold mask hide this action at this state?
fn masked_by_gold(
    kg: &KnowledgeGraph,
    mask: GoldMask,
    step: usize,
    query: Query,
    gold: EntityId,
    current: EntityId,
    action: &Action,
) -> bool {
    let active = match mask {
        GoldMask::Never => false,
        GoldMask::FirstStep => step == 0,
        GoldMask::EveryStep => true,
    };
    if !active {
        return false;
    }
    let inverse = kg.vocab().inverse_of(query.relation);
    // The two adjacency edges generated by the query triple itself.
    (current == query.head && action.entity == gold
        && (action.relation == query.relation || action.relation == inverse))
        || (current == gold && action.entity == query.head
            && (action.relation == inverse || action.relation == query.relation))
}

/// Assemble the action space for a state: graph actions (minus gold-masked
/// edges), the self-loop, then completion proposals. Proposals colliding
/// with a surviving graph action are dropped so origin flags stay
/// unambiguous.
pub fn build_action_space(
    kg: &KnowledgeGraph,
    query: Query,
    gold: EntityId,
    current: EntityId,
    step: usize,
    gold_mask: GoldMask,
    completions: &[Action],
) -> ActionSpace {
    let mut actions: Vec<Action> = Vec::with_capacity(kg.outgoing(current).len() + 1 + completions.len());
    for &(relation, entity) in kg.outgoing(current) {
        let action = Action {
            relation,
            entity,
            origin: Origin::Graph,
        };
        if masked_by_gold(kg, gold_mask, step, query, gold, current, &action) {
            continue;
        }
        actions.push(action);
    }
    actions.push(Action {
        relation: kg.vocab().loop_relation(),
        entity: current,
        origin: Origin::SelfLoop,
    });
    for c in completions {
        debug_assert_eq!(c.origin, Origin::Completion);
        if actions
            .iter()
            .any(|a| a.relation == c.relation && a.entity == c.entity)
        {
            continue;
        }
        if masked_by_gold(kg, gold_mask, step, query, gold, current, c) {
            continue;
        }
        actions.push(*c);
    }
    ActionSpace { actions }
}

/// Move the walker along a chosen action. History is updated separately by
/// the policy's LSTM; this validates the choice and advances bookkeeping.
pub fn step<R: Real>(
    state: &mut AgentState<R>,
    space: &ActionSpace,
    index: usize,
    max_hops: usize,
) -> Result<Action> {
    if state.step >= max_hops {
        return Err(Error::train("episode already at the horizon"));
    }
    let action = *space
        .actions
        .get(index)
        .ok_or_else(|| Error::train("chosen action outside the action space"))?;
    state.current = action.entity;
    state.step += 1;
    Ok(action)
}

/// Terminal reward: exactly one on a gold hit, otherwise the squashed
/// score-model value for the triple the walker claims.
pub fn reward<R: Real>(
    cache: &mut ScoreCache<'_, R>,
    query: Query,
    gold: EntityId,
    terminal: EntityId,
) -> f64 {
    if terminal == gold {
        1.0
    } else {
        cache.score(query.head, query.relation, terminal)
    }
}

/// Human-readable arrow rendering of a walked path; completion-origin hops
/// mark their relation with asterisks.
pub fn format_path(
    kg: &KnowledgeGraph,
    start: EntityId,
    hops: &[(RelationId, EntityId, Origin)],
) -> String {
    use core::fmt::Write;
    let mut out = String::new();
    let _ = write!(out, "{}", kg.vocab().entity_name(start));
    for &(rel, ent, origin) in hops {
        let name = kg.vocab().relation_name(rel);
        let deco = if origin == Origin::Completion { "*" } else { "" };
        let _ = write!(
            out,
            " --{deco}{name}{deco}--> {}",
            kg.vocab().entity_name(ent)
        );
    }
    out
}
