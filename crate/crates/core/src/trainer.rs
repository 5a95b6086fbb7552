//! REINFORCE training of the walker policy over batched episodes.
//!
//! Each batch rolls out every query `rollouts` times in lockstep on one
//! tape, sums the chosen log-probabilities per episode, weights them by the
//! terminal reward (minus an optional moving-average baseline), adds an
//! entropy bonus, and applies one Adam step. The score model is frozen
//! throughout: anticipation vectors, completion proposals and shaped
//! rewards enter as constants.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, NodeId, Tape};
use crate::env::{build_action_space, step, AgentState, EpisodeTrace, GoldMask, Query, StepRecord};
use crate::error::{Error, Result};
use crate::eval::{dc_ratio, evaluate};
use crate::kg::{EntityId, KnowledgeGraph, Origin, Split};
use crate::kge::{KgeModel, ScoreCache};
use crate::policy::{anticipate, PolicyNetwork};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum BaselineMode {
    None,
    MovingAverage { decay: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Episodes rolled out per query in a batch.
    pub rollouts: usize,
    pub lr: f64,
    /// Episode horizon T.
    pub max_hops: usize,
    /// Initial entropy-bonus weight, decayed linearly to zero.
    pub entropy_weight: f64,
    pub baseline: BaselineMode,
    pub gold_mask: GoldMask,
    pub seed: u64,
    /// Evaluate valid Hits@10 every this many epochs (0 = never); the best
    /// checkpoint by that metric is restored after training.
    pub eval_every: usize,
    pub eval_beam_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 128,
            rollouts: 20,
            lr: 1e-3,
            max_hops: 3,
            entropy_weight: 0.01,
            baseline: BaselineMode::MovingAverage { decay: 0.95 },
            gold_mask: GoldMask::EveryStep,
            seed: 0,
            eval_every: 0,
            eval_beam_width: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.max_hops == 0 {
            return Err(Error::config("epochs, batch_size and max_hops must be positive"));
        }
        if self.lr <= 0.0 {
            return Err(Error::config("learning rate must be positive"));
        }
        if let BaselineMode::MovingAverage { decay } = self.baseline {
            if !(0.0..1.0).contains(&decay) {
                return Err(Error::config("baseline decay must be in [0, 1)"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_reward: f64,
    /// Fraction of episodes terminating exactly on the gold tail.
    pub hit_rate: f64,
    /// Fraction of chosen actions with completion origin.
    pub dc_hits_ratio: f64,
    pub loss: f64,
    pub entropy_weight: f64,
    pub valid_hits10: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub reports: Vec<EpochReport>,
    /// (epoch, value) of the restored best checkpoint, when evaluation ran.
    pub best_valid_hits10: Option<(usize, f64)>,
}

/// The REINFORCE objective as a tape node:
/// -(1/B) sum_i advantage_i * logp_i, minus an optional entropy bonus.
pub fn reinforce_loss<R: Real>(
    tape: &mut Tape<R>,
    episode_logp: NodeId,
    advantages: &[f64],
    entropy: Option<(NodeId, f64)>,
) -> Result<NodeId> {
    let b = advantages.len();
    if tape.value(episode_logp).numel() != b {
        return Err(Error::shape(
            "reinforce_loss",
            format!(
                "{} advantages for {} episodes",
                b,
                tape.value(episode_logp).numel()
            ),
        ));
    }
    let weights = Tensor::from_vec(
        &[b],
        advantages
            .iter()
            .map(|&a| R::from_f64(-a / b as f64))
            .collect(),
    )?;
    let w = tape.constant(weights);
    let weighted = tape.mul(episode_logp, w)?;
    let mut loss = tape.sum_all(weighted);
    if let Some((entropy_node, weight)) = entropy {
        if weight > 0.0 {
            let bonus = tape.scale(entropy_node, R::from_f64(-weight));
            loss = tape.add(loss, bonus)?;
        }
    }
    Ok(loss)
}

struct BatchRollout<R: Real> {
    traces: Vec<EpisodeTrace>,
    tape: Tape<R>,
    /// (B,) summed log-probabilities of the chosen actions.
    episode_logp: NodeId,
    /// Mean per-step policy entropy, if requested.
    entropy: Option<NodeId>,
}

#[allow(clippy::too_many_arguments)]
fn rollout_batch_inner<R: Real>(
    kg: &KnowledgeGraph,
    policy: &PolicyNetwork<R>,
    cache: &mut ScoreCache<'_, R>,
    queries: &[(Query, EntityId)],
    n_rollouts: usize,
    max_hops: usize,
    gold_mask: GoldMask,
    training: bool,
    want_entropy: bool,
    rng: &mut Rng,
) -> Result<BatchRollout<R>> {
    let episodes: Vec<(Query, EntityId)> = queries
        .iter()
        .flat_map(|&qg| core::iter::repeat(qg).take(n_rollouts))
        .collect();
    let b = episodes.len();
    let mut tape = Tape::new(training);
    if b == 0 {
        let empty = tape.constant(Tensor::zeros(&[0]));
        return Ok(BatchRollout {
            traces: Vec::new(),
            tape,
            episode_logp: empty,
            entropy: None,
        });
    }

    // Fixed per-episode anticipation vectors.
    if policy.uses_anticipation() && cache.model().dim != policy.cfg.dim {
        return Err(Error::config(format!(
            "anticipation needs matching embedding widths: score model dim {} vs policy dim {}",
            cache.model().dim,
            policy.cfg.dim
        )));
    }
    let anticipation_block = if policy.uses_anticipation() {
        let mut block = Tensor::zeros(&[b, policy.cfg.dim]);
        for (row, &(q, _)) in episodes.iter().enumerate() {
            let v = anticipate(cache, q.head, q.relation, policy.cfg.anticipation, rng);
            block.row_mut(row).copy_from_slice(v.data());
        }
        Some(block)
    } else {
        None
    };

    let starts: Vec<EntityId> = episodes.iter().map(|&(q, _)| q.head).collect();
    let query_rels: Vec<usize> = episodes.iter().map(|&(q, _)| q.relation).collect();
    let mut states: Vec<AgentState<R>> = episodes
        .iter()
        .map(|&(q, _)| {
            AgentState::reset(
                q,
                policy.cfg.hidden,
                match &anticipation_block {
                    Some(block) => Tensor::from_vec(
                        &[policy.cfg.dim],
                        block.row(0).to_vec(), // placeholder, fixed below
                    )
                    .unwrap(),
                    None => Tensor::zeros(&[policy.cfg.dim]),
                },
            )
        })
        .collect();
    if let Some(block) = &anticipation_block {
        for (row, st) in states.iter_mut().enumerate() {
            st.anticipation = Tensor::from_vec(&[policy.cfg.dim], block.row(row).to_vec()).unwrap();
        }
    }

    let mut enc = policy.begin(&mut tape, &starts)?;
    let mut step_records: Vec<Vec<StepRecord>> = vec![Vec::with_capacity(max_hops); b];
    let mut episode_logp: Option<NodeId> = None;
    let mut entropy_sum: Option<NodeId> = None;

    for hop in 0..max_hops {
        let currents: Vec<EntityId> = states.iter().map(|s| s.current).collect();
        let state_vec = policy.encode_states(
            &mut tape,
            enc.top,
            &query_rels,
            &currents,
            anticipation_block.as_ref(),
        )?;

        // Assemble spaces; completion proposals come from the relation
        // attention over the current state.
        let mut spaces = Vec::with_capacity(b);
        if policy.cfg.completion.enabled() {
            let attention = policy.relation_attention(
                &mut tape,
                state_vec,
                kg.vocab().base_relation_count(),
            )?;
            for (row, (&(q, gold), st)) in episodes.iter().zip(&states).enumerate() {
                let mut space =
                    build_action_space(kg, q, gold, st.current, hop, gold_mask, &[]);
                let att: Vec<f64> = tape
                    .value(attention)
                    .row(row)
                    .iter()
                    .map(|v| v.to_f64())
                    .collect();
                let proposals =
                    policy.propose_completions(&att, st.current, space.len(), kg, cache);
                for p in proposals {
                    if !space
                        .actions
                        .iter()
                        .any(|a| a.relation == p.relation && a.entity == p.entity)
                    {
                        space.actions.push(p);
                    }
                }
                spaces.push(space);
            }
        } else {
            for (&(q, gold), st) in episodes.iter().zip(&states) {
                spaces.push(build_action_space(kg, q, gold, st.current, hop, gold_mask, &[]));
            }
        }

        let width = spaces.iter().map(|s| s.len()).max().unwrap_or(1);
        let mut rel_slots = vec![0usize; b * width];
        let mut ent_slots = vec![0usize; b * width];
        let mut mask = vec![false; b * width];
        for (row, space) in spaces.iter().enumerate() {
            for (col, a) in space.actions.iter().enumerate() {
                rel_slots[row * width + col] = a.relation;
                ent_slots[row * width + col] = a.entity;
                let mut keep = true;
                // Action dropout randomly hides non-loop actions during
                // training rollouts; the self-loop guarantees a valid row.
                if training
                    && policy.cfg.action_dropout > 0.0
                    && a.origin != Origin::SelfLoop
                    && rng.bernoulli(policy.cfg.action_dropout)
                {
                    keep = false;
                }
                mask[row * width + col] = keep;
            }
        }

        let probs = policy.score_actions(&mut tape, state_vec, &rel_slots, &ent_slots, width, &mask)?;

        if want_entropy {
            let h = tape.entropy_mean(probs, &mask)?;
            entropy_sum = Some(match entropy_sum {
                Some(acc) => tape.add(acc, h)?,
                None => h,
            });
        }

        // Sample one action per episode from the masked distribution.
        let mut chosen = Vec::with_capacity(b);
        for row in 0..b {
            let idx = rng.pick_weighted(tape.value(probs).row(row));
            chosen.push(idx);
        }
        let logp = tape.log_guarded(probs);
        let picked = tape.gather_rows(logp, &chosen)?;
        episode_logp = Some(match episode_logp {
            Some(acc) => tape.add(acc, picked)?,
            None => picked,
        });

        let mut rels = Vec::with_capacity(b);
        let mut ents = Vec::with_capacity(b);
        for (row, st) in states.iter_mut().enumerate() {
            let action = step(st, &spaces[row], chosen[row], max_hops)?;
            step_records[row].push(StepRecord {
                relation: action.relation,
                entity: action.entity,
                origin: action.origin,
                log_prob: tape.value(picked).data()[row].to_f64(),
            });
            rels.push(action.relation);
            ents.push(action.entity);
        }
        enc = policy.advance(&mut tape, &enc, &rels, &ents)?;
        // Mirror the encoder output into the per-episode states.
        for (row, st) in states.iter_mut().enumerate() {
            st.history =
                Tensor::from_vec(&[policy.cfg.hidden], tape.value(enc.top).row(row).to_vec())
                    .unwrap();
        }
    }

    let traces: Vec<EpisodeTrace> = episodes
        .iter()
        .zip(states.iter())
        .zip(step_records.into_iter())
        .map(|((&(q, gold), st), steps)| {
            let reward = crate::env::reward(cache, q, gold, st.current);
            EpisodeTrace {
                head: q.head,
                relation: q.relation,
                gold,
                steps,
                terminal: st.current,
                reward,
                hit: st.current == gold,
            }
        })
        .collect();

    let episode_logp = episode_logp.expect("max_hops >= 1");
    let entropy = match entropy_sum {
        Some(acc) => Some(tape.scale(acc, R::from_f64(1.0 / max_hops as f64))),
        None => None,
    };
    Ok(BatchRollout {
        traces,
        tape,
        episode_logp,
        entropy,
    })
}

/// Roll out episodes under the current policy without touching gradients.
/// Log-probabilities are recorded at sampling time; a fixed seed gives a
/// fixed trace list.
#[allow(clippy::too_many_arguments)]
pub fn rollout_batch<R: Real>(
    kg: &KnowledgeGraph,
    policy: &PolicyNetwork<R>,
    kge: &KgeModel<R>,
    queries: &[(Query, EntityId)],
    n_rollouts: usize,
    max_hops: usize,
    gold_mask: GoldMask,
    rng: &mut Rng,
) -> Result<Vec<EpisodeTrace>> {
    let mut cache = ScoreCache::new(kge);
    let out = rollout_batch_inner(
        kg, policy, &mut cache, queries, n_rollouts, max_hops, gold_mask, false, false, rng,
    )?;
    Ok(out.traces)
}

/// Train the policy in place. Returns per-epoch reports; when validation
/// runs, the best checkpoint by valid Hits@10 is restored at the end.
pub fn train<R: Real>(
    kg: &KnowledgeGraph,
    policy: &mut PolicyNetwork<R>,
    kge: &KgeModel<R>,
    cfg: &TrainConfig,
    mut progress: Option<&mut dyn FnMut(&EpochReport)>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let queries: Vec<(Query, EntityId)> = kg
        .split(Split::Train)
        .iter()
        .map(|t| {
            (
                Query {
                    head: t.head,
                    relation: t.relation,
                },
                t.tail,
            )
        })
        .collect();
    if queries.is_empty() {
        return Err(Error::train("no training queries"));
    }
    let rollouts = cfg.rollouts.max(1);
    let mut rng = Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.lr);
    let mut cache = ScoreCache::new(kge);
    let mut baseline = 0.0f64;
    let mut reports = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Vec<Tensor<R>>)> = None;
    let eval_seed = cfg.seed ^ 0x9e37_79b9_7f4a_7c15;

    let mut order: Vec<usize> = (0..queries.len()).collect();
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let entropy_weight = if cfg.epochs <= 1 {
            cfg.entropy_weight
        } else {
            cfg.entropy_weight * (1.0 - epoch as f64 / (cfg.epochs - 1) as f64)
        };
        let mut epoch_traces: Vec<EpisodeTrace> = Vec::new();
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(Query, EntityId)> = chunk.iter().map(|&i| queries[i]).collect();
            let rollout = rollout_batch_inner(
                kg,
                policy,
                &mut cache,
                &batch,
                rollouts,
                cfg.max_hops,
                cfg.gold_mask,
                true,
                entropy_weight > 0.0,
                &mut rng,
            )?;
            let rewards: Vec<f64> = rollout.traces.iter().map(|t| t.reward).collect();
            let advantages: Vec<f64> = match cfg.baseline {
                BaselineMode::None => rewards.clone(),
                BaselineMode::MovingAverage { .. } => {
                    rewards.iter().map(|r| r - baseline).collect()
                }
            };
            let mut tape = rollout.tape;
            let entropy = rollout.entropy.map(|node| (node, entropy_weight));
            let loss = reinforce_loss(&mut tape, rollout.episode_logp, &advantages, entropy)?;
            let loss_val = tape.value(loss).scalar_value().to_f64();
            if !loss_val.is_finite() {
                return Err(Error::train(format!(
                    "policy training diverged at epoch {epoch}: loss {loss_val}"
                )));
            }
            policy.store.zero_grads();
            tape.backward(loss, &mut policy.store)?;
            adam.step(&mut policy.store);
            if let BaselineMode::MovingAverage { decay } = cfg.baseline {
                let mean_r = rewards.iter().sum::<f64>() / rewards.len().max(1) as f64;
                baseline = decay * baseline + (1.0 - decay) * mean_r;
            }
            epoch_loss += loss_val;
            batches += 1;
            epoch_traces.extend(rollout.traces);
        }

        let n = epoch_traces.len().max(1) as f64;
        let mean_reward = epoch_traces.iter().map(|t| t.reward).sum::<f64>() / n;
        let hit_rate = epoch_traces.iter().filter(|t| t.hit).count() as f64 / n;
        let ratio = dc_ratio(&epoch_traces);
        let valid_hits10 = if cfg.eval_every > 0
            && !kg.split(Split::Valid).is_empty()
            && (epoch + 1) % cfg.eval_every == 0
        {
            let result = evaluate(
                kg,
                policy,
                kge,
                Split::Valid,
                cfg.eval_beam_width,
                cfg.max_hops,
                eval_seed,
            )?;
            let better = match &best {
                Some((_, b, _)) => result.hits10 > *b,
                None => true,
            };
            if better {
                best = Some((epoch, result.hits10, policy.store.snapshot()));
            }
            Some(result.hits10)
        } else {
            None
        };

        let report = EpochReport {
            epoch,
            mean_reward,
            hit_rate,
            dc_hits_ratio: ratio,
            loss: epoch_loss / batches.max(1) as f64,
            entropy_weight,
            valid_hits10,
        };
        if let Some(cb) = progress.as_deref_mut() {
            cb(&report);
        }
        reports.push(report);
    }

    let best_valid_hits10 = best.map(|(epoch, value, snapshot)| {
        policy.store.restore(&snapshot);
        (epoch, value)
    });
    Ok(TrainOutcome {
        reports,
        best_valid_hits10,
    })
}
