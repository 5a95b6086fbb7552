//! Beam-search inference, filtered ranking and trace analysis.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use serde::Serialize;

use crate::autodiff::Tape;
use crate::env::{build_action_space, EpisodeTrace, GoldMask, Query};
use crate::error::Result;
use crate::kg::{EntityId, KnowledgeGraph, Origin, RelationId, Split};
use crate::kge::{KgeModel, ScoreCache};
use crate::policy::{anticipate, PolicyNetwork};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tensor::Tensor;
use crate::trainer::EpochReport;

/// One completed path: hop sequence with per-hop origins and the summed
/// log-probability under the policy.
#[derive(Debug, Clone, Serialize)]
pub struct BeamEntry {
    pub hops: Vec<(RelationId, EntityId, Origin)>,
    pub log_prob: f64,
}

impl BeamEntry {
    pub fn terminal(&self, start: EntityId) -> EntityId {
        self.hops.last().map(|&(_, e, _)| e).unwrap_or(start)
    }
}

struct Beam<R> {
    current: EntityId,
    log_prob: f64,
    hops: Vec<(RelationId, EntityId, Origin)>,
    lstm: Vec<(Tensor<R>, Tensor<R>)>,
}

/// Top-`width` fixed-length paths for a query by cumulative log-probability.
/// Expansion goes through the full action spaces (graph + self-loop +
/// completion proposals); no gold masking is applied at inference. Ties are
/// broken by the lexicographically smaller hop sequence so results are
/// deterministic and enumeration-comparable.
pub fn beam_search<R: Real>(
    kg: &KnowledgeGraph,
    policy: &PolicyNetwork<R>,
    cache: &mut ScoreCache<'_, R>,
    query: Query,
    width: usize,
    max_hops: usize,
    anticipation: &Tensor<R>,
) -> Result<Vec<BeamEntry>> {
    if width == 0 {
        return Ok(Vec::new());
    }
    // Seed beam: encoder warmed with the start token.
    let init_lstm = {
        let mut tape = Tape::new(false);
        let enc = policy.begin(&mut tape, &[query.head])?;
        enc.layers
            .iter()
            .map(|&(h, c)| {
                (
                    Tensor::from_vec(&[policy.cfg.hidden], tape.value(h).row(0).to_vec()).unwrap(),
                    Tensor::from_vec(&[policy.cfg.hidden], tape.value(c).row(0).to_vec()).unwrap(),
                )
            })
            .collect()
    };
    let mut beams = vec![Beam {
        current: query.head,
        log_prob: 0.0,
        hops: Vec::new(),
        lstm: init_lstm,
    }];

    for step_idx in 0..max_hops {
        let b = beams.len();
        let mut tape = Tape::new(false);
        // Re-enter the tape with stored state values, batched over beams.
        let layers: Vec<(Tensor<R>, Tensor<R>)> = (0..policy.cfg.lstm_layers)
            .map(|l| {
                let mut h = Tensor::zeros(&[b, policy.cfg.hidden]);
                let mut c = Tensor::zeros(&[b, policy.cfg.hidden]);
                for (row, beam) in beams.iter().enumerate() {
                    h.row_mut(row).copy_from_slice(beam.lstm[l].0.data());
                    c.row_mut(row).copy_from_slice(beam.lstm[l].1.data());
                }
                (h, c)
            })
            .collect();
        let enc = policy.encoding_from_values(&mut tape, layers);
        let currents: Vec<EntityId> = beams.iter().map(|x| x.current).collect();
        let rels = vec![query.relation; b];
        let anticipation_block = if policy.uses_anticipation() {
            let mut block = Tensor::zeros(&[b, policy.cfg.dim]);
            for row in 0..b {
                block.row_mut(row).copy_from_slice(anticipation.data());
            }
            Some(block)
        } else {
            None
        };
        let state = policy.encode_states(
            &mut tape,
            enc.top,
            &rels,
            &currents,
            anticipation_block.as_ref(),
        )?;

        // Action spaces per beam, with completion proposals when enabled.
        let mut spaces = Vec::with_capacity(b);
        if policy.cfg.completion.enabled() {
            let attention =
                policy.relation_attention(&mut tape, state, kg.vocab().base_relation_count())?;
            for (row, beam) in beams.iter().enumerate() {
                let mut space = build_action_space(
                    kg,
                    query,
                    query.head,
                    beam.current,
                    step_idx,
                    GoldMask::Never,
                    &[],
                );
                let att: Vec<f64> = tape
                    .value(attention)
                    .row(row)
                    .iter()
                    .map(|v| v.to_f64())
                    .collect();
                let proposals =
                    policy.propose_completions(&att, beam.current, space.len(), kg, cache);
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
            for beam in &beams {
                spaces.push(build_action_space(
                    kg,
                    query,
                    query.head,
                    beam.current,
                    step_idx,
                    GoldMask::Never,
                    &[],
                ));
            }
        }

        let grid_width = spaces.iter().map(|s| s.len()).max().unwrap_or(1);
        let mut rel_slots = vec![0usize; b * grid_width];
        let mut ent_slots = vec![0usize; b * grid_width];
        let mut mask = vec![false; b * grid_width];
        for (row, space) in spaces.iter().enumerate() {
            for (col, a) in space.actions.iter().enumerate() {
                rel_slots[row * grid_width + col] = a.relation;
                ent_slots[row * grid_width + col] = a.entity;
                mask[row * grid_width + col] = true;
            }
        }
        let probs = policy.score_actions(&mut tape, state, &rel_slots, &ent_slots, grid_width, &mask)?;

        // Candidate expansions across all beams.
        struct Candidate {
            log_prob: f64,
            beam: usize,
            action: usize,
        }
        let mut candidates = Vec::new();
        for (row, space) in spaces.iter().enumerate() {
            for (col, _) in space.actions.iter().enumerate() {
                let p = tape.value(probs).row(row)[col].to_f64();
                let lp = libm::log(p.max(1e-300));
                candidates.push(Candidate {
                    log_prob: beams[row].log_prob + lp,
                    beam: row,
                    action: col,
                });
            }
        }
        candidates.sort_by(|x, y| {
            y.log_prob.total_cmp(&x.log_prob).then_with(|| {
                let sig_x = (&beams[x.beam].hops, &spaces[x.beam].actions[x.action]);
                let sig_y = (&beams[y.beam].hops, &spaces[y.beam].actions[y.action]);
                let key = |sig: &(&Vec<(RelationId, EntityId, Origin)>, &crate::kg::Action)| {
                    let mut v: Vec<(usize, usize)> =
                        sig.0.iter().map(|&(r, e, _)| (r, e)).collect();
                    v.push((sig.1.relation, sig.1.entity));
                    v
                };
                key(&sig_x).cmp(&key(&sig_y))
            })
        });
        candidates.truncate(width);

        // Advance the encoder for the surviving candidates in one batch.
        let survivors = candidates.len();
        let mut next_layers_in: Vec<(Tensor<R>, Tensor<R>)> = (0..policy.cfg.lstm_layers)
            .map(|l| {
                let mut h = Tensor::zeros(&[survivors, policy.cfg.hidden]);
                let mut c = Tensor::zeros(&[survivors, policy.cfg.hidden]);
                for (row, cand) in candidates.iter().enumerate() {
                    h.row_mut(row)
                        .copy_from_slice(beams[cand.beam].lstm[l].0.data());
                    c.row_mut(row)
                        .copy_from_slice(beams[cand.beam].lstm[l].1.data());
                }
                (h, c)
            })
            .collect();
        let mut adv_tape = Tape::new(false);
        let prev = policy.encoding_from_values(&mut adv_tape, core::mem::take(&mut next_layers_in));
        let chosen_rels: Vec<RelationId> = candidates
            .iter()
            .map(|cand| spaces[cand.beam].actions[cand.action].relation)
            .collect();
        let chosen_ents: Vec<EntityId> = candidates
            .iter()
            .map(|cand| spaces[cand.beam].actions[cand.action].entity)
            .collect();
        let advanced = policy.advance(&mut adv_tape, &prev, &chosen_rels, &chosen_ents)?;

        let mut next_beams = Vec::with_capacity(survivors);
        for (row, cand) in candidates.iter().enumerate() {
            let action = spaces[cand.beam].actions[cand.action];
            let mut hops = beams[cand.beam].hops.clone();
            hops.push((action.relation, action.entity, action.origin));
            let lstm: Vec<(Tensor<R>, Tensor<R>)> = advanced
                .layers
                .iter()
                .map(|&(h, c)| {
                    (
                        Tensor::from_vec(
                            &[policy.cfg.hidden],
                            adv_tape.value(h).row(row).to_vec(),
                        )
                        .unwrap(),
                        Tensor::from_vec(
                            &[policy.cfg.hidden],
                            adv_tape.value(c).row(row).to_vec(),
                        )
                        .unwrap(),
                    )
                })
                .collect();
            next_beams.push(Beam {
                current: action.entity,
                log_prob: cand.log_prob,
                hops,
                lstm,
            });
        }
        beams = next_beams;
    }

    Ok(beams
        .into_iter()
        .map(|b| BeamEntry {
            hops: b.hops,
            log_prob: b.log_prob,
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryRank {
    pub head: EntityId,
    pub relation: RelationId,
    pub gold: EntityId,
    /// 1-based; fractional when the gold was unreached and received the
    /// expected rank of a random ordering of unreached candidates.
    pub rank: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RankingResult {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub per_query: Vec<QueryRank>,
}

impl RankingResult {
    fn from_ranks(per_query: Vec<QueryRank>) -> RankingResult {
        let n = per_query.len().max(1) as f64;
        let mrr = per_query.iter().map(|q| 1.0 / q.rank).sum::<f64>() / n;
        let hits = |k: f64| per_query.iter().filter(|q| q.rank <= k).count() as f64 / n;
        RankingResult {
            mrr,
            hits1: hits(1.0),
            hits3: hits(3.0),
            hits10: hits(10.0),
            per_query,
        }
    }
}

/// Filtered rank of the gold among beam-reached terminals. Known other
/// answers are excluded; reached candidates order by best path
/// log-probability (ties by entity id); every unreached candidate shares
/// the expected rank of a uniformly random ordering below the reached ones.
pub fn filtered_rank(
    reached: &BTreeMap<EntityId, f64>,
    gold: EntityId,
    known_other_answers: &BTreeSet<EntityId>,
    num_entities: usize,
) -> f64 {
    let gold_score = reached.get(&gold);
    match gold_score {
        Some(&gs) => {
            let better = reached
                .iter()
                .filter(|(&e, _)| e != gold && !known_other_answers.contains(&e))
                .filter(|(&e, &s)| s > gs || (s == gs && e < gold))
                .count();
            (1 + better) as f64
        }
        None => {
            let reached_count = reached
                .iter()
                .filter(|(&e, _)| !known_other_answers.contains(&e))
                .count();
            // Candidates are all entities minus the filtered known answers;
            // the unreached ones share a uniform-random expected rank.
            let unreached = num_entities - known_other_answers.len() - reached_count;
            reached_count as f64 + (unreached as f64 + 1.0) / 2.0
        }
    }
}

/// Filtered tail ranking of a split by beam-search path probability.
pub fn evaluate<R: Real>(
    kg: &KnowledgeGraph,
    policy: &PolicyNetwork<R>,
    kge: &KgeModel<R>,
    split: Split,
    beam_width: usize,
    max_hops: usize,
    seed: u64,
) -> Result<RankingResult> {
    if policy.uses_anticipation() && kge.dim != policy.cfg.dim {
        return Err(crate::error::Error::config(alloc::format!(
            "anticipation needs matching embedding widths: score model dim {} vs policy dim {}",
            kge.dim,
            policy.cfg.dim
        )));
    }
    let mut rng = Rng::seed_from_u64(seed);
    let mut cache = ScoreCache::new(kge);
    let mut per_query = Vec::with_capacity(kg.split(split).len());
    for t in kg.split(split) {
        let query = Query {
            head: t.head,
            relation: t.relation,
        };
        let e_p = anticipate(&mut cache, t.head, t.relation, policy.cfg.anticipation, &mut rng);
        let beams = beam_search(kg, policy, &mut cache, query, beam_width, max_hops, &e_p)?;
        let reached = best_terminals(&beams, query.head);
        let mut known = kg.filter_candidates(t.head, t.relation);
        known.remove(&t.tail);
        let rank = filtered_rank(&reached, t.tail, &known, kg.vocab().entity_count());
        per_query.push(QueryRank {
            head: t.head,
            relation: t.relation,
            gold: t.tail,
            rank,
        });
    }
    Ok(RankingResult::from_ranks(per_query))
}

/// Collapse beam entries to their best log-probability per terminal entity.
pub fn best_terminals(beams: &[BeamEntry], start: EntityId) -> BTreeMap<EntityId, f64> {
    let mut out: BTreeMap<EntityId, f64> = BTreeMap::new();
    for b in beams {
        let terminal = b.terminal(start);
        match out.get_mut(&terminal) {
            Some(best) => {
                if b.log_prob > *best {
                    *best = b.log_prob;
                }
            }
            None => {
                out.insert(terminal, b.log_prob);
            }
        }
    }
    out
}

/// Fraction of chosen actions across traces that were completion-injected.
pub fn dc_ratio(traces: &[EpisodeTrace]) -> f64 {
    let total: usize = traces.iter().map(|t| t.steps.len()).sum();
    if total == 0 {
        return 0.0;
    }
    let hits: usize = traces
        .iter()
        .map(|t| {
            t.steps
                .iter()
                .filter(|s| s.origin == Origin::Completion)
                .count()
        })
        .sum();
    hits as f64 / total as f64
}

/// (epoch, completion-choice ratio) rows for one training run.
pub fn ratio_vs_epoch(reports: &[EpochReport]) -> Vec<(usize, f64)> {
    reports.iter().map(|r| (r.epoch, r.dc_hits_ratio)).collect()
}

/// Average completion-choice ratio of the last `window` epochs per run,
/// sorted by the run's alpha.
pub fn ratio_vs_alpha(runs: &[(f64, Vec<EpochReport>)], window: usize) -> Vec<(f64, f64)> {
    let mut rows: Vec<(f64, f64)> = runs
        .iter()
        .map(|(alpha, reports)| {
            let tail = reports.len().saturating_sub(window);
            let slice = &reports[tail..];
            let avg = if slice.is_empty() {
                0.0
            } else {
                slice.iter().map(|r| r.dc_hits_ratio).sum::<f64>() / slice.len() as f64
            };
            (*alpha, avg)
        })
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    rows
}
