//! Acceptance suite: one test per criterion, each printing a PASS line
//! with its measured numbers (visible under `--nocapture`).

use std::collections::BTreeSet;
use std::time::Instant;

use kghop_core::autodiff::{Adam, BnAxes, LstmLayer, ParamStore, Tape};
use kghop_core::env::{build_action_space, GoldMask, Query};
use kghop_core::eval::{beam_search, best_terminals, evaluate, ratio_vs_alpha, BeamEntry};
use kghop_core::kg::{EntityId, GraphConfig, KnowledgeGraph, RawTriple, RelationId, Split};
use kghop_core::kge::{train_kge, ConvEShape, KgeConfig, KgeKind, KgeModel, ScoreCache};
use kghop_core::policy::{
    added_action_budget, anticipate, relations_to_probe, AnticipationStrategy, CompletionConfig,
    PolicyConfig, PolicyNetwork,
};
use kghop_core::rng::Rng;
use kghop_core::tensor::Tensor;
use kghop_core::trainer::{reinforce_loss, train, BaselineMode, EpochReport, TrainConfig};

// ---------------------------------------------------------------------------
// Synthetic compositional world shared by the training criteria: 200
// entities, a query relation planted as the composition of two hops, 20% of
// its edges held out as test queries and 20% as validation.
// ---------------------------------------------------------------------------

const SOURCES: usize = 120;
const MIDS: usize = 30;
const TAILS: usize = 50;

fn compositional_kg(seed: u64, keep_r2: f64) -> KnowledgeGraph {
    let mut rng = Rng::seed_from_u64(seed);
    let mut train: Vec<RawTriple> = Vec::new();
    let mid_of: Vec<usize> = (0..SOURCES).map(|_| rng.below(MIDS)).collect();
    let tail_of: Vec<usize> = (0..MIDS).map(|_| rng.below(TAILS)).collect();
    for (s, &m) in mid_of.iter().enumerate() {
        train.push((format!("s{s}"), "step_one".into(), format!("m{m}")));
    }
    for (m, &t) in tail_of.iter().enumerate() {
        if rng.uniform() < keep_r2 {
            train.push((format!("m{m}"), "step_two".into(), format!("t{t}")));
        }
    }
    let total = SOURCES + MIDS + TAILS;
    let name = |i: usize| -> String {
        if i < SOURCES {
            format!("s{i}")
        } else if i < SOURCES + MIDS {
            format!("m{}", i - SOURCES)
        } else {
            format!("t{}", i - SOURCES - MIDS)
        }
    };
    for i in 0..total {
        // Redraw on self-loops so every entity appears in the vocabulary.
        let mut j = rng.below(total);
        while j == i {
            j = rng.below(total);
        }
        train.push((name(i), "noise_a".into(), name(j)));
    }
    let mut order: Vec<usize> = (0..SOURCES).collect();
    rng.shuffle(&mut order);
    let n_train = SOURCES * 60 / 100;
    let n_valid = SOURCES * 20 / 100;
    let mut valid: Vec<RawTriple> = Vec::new();
    let mut test: Vec<RawTriple> = Vec::new();
    for (slot, &s) in order.iter().enumerate() {
        let gold = format!("t{}", tail_of[mid_of[s]]);
        let triple = (format!("s{s}"), "combo".into(), gold);
        if slot < n_train {
            train.push(triple);
        } else if slot < n_train + n_valid {
            valid.push(triple);
        } else {
            test.push(triple);
        }
    }
    let (kg, warnings) = KnowledgeGraph::build(&train, &valid, &test, GraphConfig::default());
    assert!(warnings.is_empty(), "{warnings:?}");
    assert_eq!(kg.vocab().entity_count(), 200);
    kg
}

fn world_kge(kg: &KnowledgeGraph, seed: u64) -> KgeModel<f32> {
    let cfg = KgeConfig {
        kind: KgeKind::DistMult,
        dim: 64,
        lr: 1e-2,
        epochs: 300,
        batch_size: 64,
        label_smoothing: 0.05,
        eval_every: 0,
        seed,
        ..KgeConfig::default()
    };
    train_kge::<f32>(kg, &cfg).unwrap().0
}

fn agent_config(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        rollouts: 8,
        lr: 3e-3,
        max_hops: 3,
        entropy_weight: 0.05,
        baseline: BaselineMode::MovingAverage { decay: 0.95 },
        gold_mask: GoldMask::EveryStep,
        seed,
        eval_every: 0,
        eval_beam_width: 32,
    }
}

fn fresh_policy(
    kg: &KnowledgeGraph,
    anticipation: AnticipationStrategy,
    completion: CompletionConfig,
    seed: u64,
) -> PolicyNetwork<f32> {
    let mut rng = Rng::seed_from_u64(seed ^ 0x5eed);
    PolicyNetwork::new(
        kg.vocab().entity_count(),
        kg.vocab().relation_count(),
        PolicyConfig {
            dim: 32,
            hidden: 32,
            lstm_layers: 3,
            anticipation,
            completion,
            action_dropout: 0.0,
        },
        &mut rng,
    )
    .unwrap()
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    xs[xs.len() / 2]
}

// ---------------------------------------------------------------------------
// Criterion: gradient suite. Every tape op and the composed policy/score
// losses agree with central finite differences within 1e-4 relative error
// at 64-bit, in under a minute.
// ---------------------------------------------------------------------------

const REL_TOL: f64 = 1e-4;
const ABS_TOL: f64 = 1e-7;
const FD_H: f64 = 1e-5;

fn fd_check(
    store: &mut ParamStore<f64>,
    build: impl Fn(&mut Tape<f64>, &mut ParamStore<f64>) -> kghop_core::autodiff::NodeId,
    label: &str,
) {
    store.zero_grads();
    let mut tape = Tape::new(true);
    let loss = build(&mut tape, store);
    tape.backward(loss, store).unwrap();
    let analytic: Vec<Vec<f64>> = store.iter().map(|(_, e)| e.grad.data().to_vec()).collect();
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for (pi, id) in ids.iter().enumerate() {
        for k in 0..store.value(*id).numel() {
            let orig = store.value(*id).data()[k];
            let h = FD_H * orig.abs().max(1.0);
            store.value_mut(*id).data_mut()[k] = orig + h;
            let mut tp = Tape::new(true);
            let lp = build(&mut tp, store);
            let fp = tp.value(lp).scalar_value();
            store.value_mut(*id).data_mut()[k] = orig - h;
            let mut tm = Tape::new(true);
            let lm = build(&mut tm, store);
            let fm = tm.value(lm).scalar_value();
            store.value_mut(*id).data_mut()[k] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let a = analytic[pi][k];
            assert!(
                (a - fd).abs() <= REL_TOL * a.abs().max(fd.abs()) + ABS_TOL,
                "{label}: param {pi}[{k}]: {a} vs {fd}"
            );
        }
    }
}

fn pinned(tape: &mut Tape<f64>, x: kghop_core::autodiff::NodeId, seed: u64) -> kghop_core::autodiff::NodeId {
    let n = tape.value(x).numel();
    let shape = tape.value(x).shape().to_vec();
    let mut rng = Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..n).map(|_| rng.uniform() * 2.0 - 1.0).collect();
    let w = tape.constant(Tensor::from_vec(&shape, w).unwrap());
    let prod = tape.mul(x, w).unwrap();
    tape.sum_all(prod)
}

#[test]
fn criterion_gradient_suite() {
    let started = Instant::now();
    let mut rng = Rng::seed_from_u64(404);

    // Elementwise, broadcast, reductions, gathers, activations.
    let mut store = ParamStore::new();
    store.insert("a", Tensor::xavier(&[3, 4], &mut rng), true).unwrap();
    store.insert("b", Tensor::xavier(&[3, 4], &mut rng), true).unwrap();
    store.insert("bias", Tensor::xavier(&[4], &mut rng), true).unwrap();
    let (a, b, bias) = (
        store.id_of("a").unwrap(),
        store.id_of("b").unwrap(),
        store.id_of("bias").unwrap(),
    );
    fd_check(
        &mut store,
        |t, s| {
            let an = t.param(s, a);
            let bn = t.param(s, b);
            let bias_n = t.param(s, bias);
            let sum = t.add(an, bn).unwrap();
            let dif = t.sub(sum, bn).unwrap();
            let prod = t.mul(dif, bn).unwrap();
            let scaled = t.scale(prod, -0.7);
            let shifted = t.add_scalar(scaled, 0.2);
            let neg = t.neg(shifted);
            let rowed = t.add_row(neg, bias_n).unwrap();
            let relu = t.relu(rowed);
            let sig = t.sigmoid(relu);
            let tanh = t.tanh_op(sig);
            let sq = t.square(tanh);
            let rooted = t.sqrt_guarded(sq);
            let absd = t.abs_op(rooted);
            let logd = t.log_guarded(absd);
            let rows = t.sum_last(logd);
            let picked = t.gather_rows(logd, &[1, 3, 0]).unwrap();
            let stacked = t.stack_rows(&[picked, picked]).unwrap();
            let l1 = pinned(t, rows, 1);
            let l2 = pinned(t, stacked, 2);
            let both = t.add(l1, l2).unwrap();
            t.mean_all(both)
        },
        "elementwise chain",
    );

    // Linear algebra, lookup, concat/slice/reshape, score_rows.
    let mut store = ParamStore::new();
    store.insert("x", Tensor::xavier(&[2, 3], &mut rng), true).unwrap();
    store.insert("w", Tensor::xavier(&[4, 3], &mut rng), true).unwrap();
    store.insert("wb", Tensor::xavier(&[4], &mut rng), true).unwrap();
    store.insert("m", Tensor::xavier(&[4, 2], &mut rng), true).unwrap();
    store.insert("table", Tensor::xavier(&[5, 4], &mut rng), true).unwrap();
    store.insert("state", Tensor::xavier(&[2, 4], &mut rng), true).unwrap();
    let ids: Vec<_> = ["x", "w", "wb", "m", "table", "state"]
        .iter()
        .map(|n| store.id_of(n).unwrap())
        .collect();
    fd_check(
        &mut store,
        |t, s| {
            let x = t.param(s, ids[0]);
            let lin = t.linear(s, x, ids[1], Some(ids[2])).unwrap();
            let mn = t.param(s, ids[3]);
            let mm = t.matmul(lin, mn).unwrap();
            let nt = t.matmul_nt(mm, mm).unwrap();
            let emb = t.lookup(s, ids[4], &[0, 4, 2, 4]);
            let cat = t.concat_last(&[emb, emb]).unwrap();
            let sl = t.slice_last(cat, 2, 4).unwrap();
            let grid = t.reshape(sl, &[2, 2, 2]).unwrap();
            let st = t.param(s, ids[5]);
            let half = t.slice_last(st, 0, 2).unwrap();
            let scores = t.score_rows(grid, half).unwrap();
            let l1 = pinned(t, nt, 3);
            let l2 = pinned(t, scores, 4);
            t.add(l1, l2).unwrap()
        },
        "linear algebra chain",
    );

    // Masked softmax, entropy, cross entropy, bce, dropout.
    let mut store = ParamStore::new();
    store.insert("logits", Tensor::xavier(&[3, 5], &mut rng), true).unwrap();
    let logits = store.id_of("logits").unwrap();
    let mask = [
        true, true, false, true, true, true, true, true, true, false, true, false, true, true,
        true,
    ];
    let mut trng = Rng::seed_from_u64(1);
    let targets = Tensor::from_vec(
        &[3, 5],
        (0..15).map(|_| if trng.bernoulli(0.5) { 0.95 } else { 0.05 }).collect(),
    )
    .unwrap();
    fd_check(
        &mut store,
        |t, s| {
            let x = t.param(s, logits);
            let p = t.masked_softmax(x, &mask).unwrap();
            let lp = t.log_guarded(p);
            let picked = t.gather_rows(lp, &[0, 3, 4]).unwrap();
            let ent = t.entropy_mean(p, &mask).unwrap();
            let ce = t.cross_entropy(x, &[1, 0, 4]).unwrap();
            let bce = t.bce_with_logits(x, &targets).unwrap();
            let mut drop_rng = Rng::seed_from_u64(9);
            let dropped = t.dropout(x, 0.3, &mut drop_rng);
            let l1 = t.sum_all(picked);
            let l2 = pinned(t, dropped, 5);
            let s1 = t.add(l1, ent).unwrap();
            let s2 = t.add(ce, bce).unwrap();
            let s3 = t.add(s1, s2).unwrap();
            t.add(s3, l2).unwrap()
        },
        "softmax/losses chain",
    );

    // Convolution and batch norm (both layouts), LSTM step.
    let mut store = ParamStore::new();
    store.insert("img", Tensor::xavier(&[2, 2, 4, 4], &mut rng), true).unwrap();
    store.insert("filt", Tensor::xavier(&[3, 2, 2, 2], &mut rng), true).unwrap();
    store.insert("cb", Tensor::xavier(&[3], &mut rng), true).unwrap();
    store.insert("gamma", Tensor::full(&[3], 1.1), true).unwrap();
    store.insert("beta", Tensor::full(&[3], -0.2), true).unwrap();
    store.insert("rmean", Tensor::zeros(&[3]), false).unwrap();
    store.insert("rvar", Tensor::full(&[3], 1.0), false).unwrap();
    store.insert("g2", Tensor::full(&[27], 0.9), true).unwrap();
    store.insert("b2", Tensor::zeros(&[27]), true).unwrap();
    store.insert("rm2", Tensor::zeros(&[27]), false).unwrap();
    store.insert("rv2", Tensor::full(&[27], 1.0), false).unwrap();
    let names: Vec<_> = ["img", "filt", "cb", "gamma", "beta", "rmean", "rvar", "g2", "b2", "rm2", "rv2"]
        .iter()
        .map(|n| store.id_of(n).unwrap())
        .collect();
    fd_check(
        &mut store,
        |t, s| {
            s.value_mut(names[5]).fill(0.0);
            s.value_mut(names[6]).fill(1.0);
            s.value_mut(names[9]).fill(0.0);
            s.value_mut(names[10]).fill(1.0);
            let x = t.param(s, names[0]);
            let w = t.param(s, names[1]);
            let cb = t.param(s, names[2]);
            let y = t.conv2d(x, w, Some(cb)).unwrap();
            let y = t
                .batch_norm(s, y, names[3], names[4], names[5], names[6], BnAxes::PerChannel, 0.1, 1e-5)
                .unwrap();
            let flat = t.reshape(y, &[2, 27]).unwrap();
            let flat = t
                .batch_norm(s, flat, names[7], names[8], names[9], names[10], BnAxes::PerFeature, 0.1, 1e-5)
                .unwrap();
            pinned(t, flat, 6)
        },
        "conv/batch-norm chain",
    );

    let hidden = 3;
    let mut store = ParamStore::new();
    store.insert("x", Tensor::xavier(&[2, 4], &mut rng), true).unwrap();
    store.insert("h", Tensor::xavier(&[2, hidden], &mut rng), true).unwrap();
    store.insert("c", Tensor::xavier(&[2, hidden], &mut rng), true).unwrap();
    store.insert("w_ih", Tensor::xavier(&[4 * hidden, 4], &mut rng), true).unwrap();
    store.insert("w_hh", Tensor::xavier(&[4 * hidden, hidden], &mut rng), true).unwrap();
    store.insert("lb", Tensor::xavier(&[4 * hidden], &mut rng), true).unwrap();
    let layer = LstmLayer {
        w_ih: store.id_of("w_ih").unwrap(),
        w_hh: store.id_of("w_hh").unwrap(),
        bias: store.id_of("lb").unwrap(),
    };
    let xs = store.id_of("x").unwrap();
    let hs = store.id_of("h").unwrap();
    let cs = store.id_of("c").unwrap();
    fd_check(
        &mut store,
        |t, s| {
            let x = t.param(s, xs);
            let h = t.param(s, hs);
            let c = t.param(s, cs);
            let (next, top) = t.lstm_step(s, x, &[(h, c)], &[layer]).unwrap();
            let l1 = pinned(t, top, 7);
            let l2 = pinned(t, next[0].1, 8);
            t.add(l1, l2).unwrap()
        },
        "lstm step",
    );

    // Composed policy loss (fixed actions) through a full network.
    let (kg_toy, _) = KnowledgeGraph::build(
        &[
            ("a".into(), "r".into(), "b".into()),
            ("b".into(), "r".into(), "c".into()),
            ("a".into(), "s".into(), "c".into()),
        ],
        &[],
        &[],
        GraphConfig::default(),
    );
    let mut prng = Rng::seed_from_u64(31);
    let policy: PolicyNetwork<f64> = PolicyNetwork::new(
        kg_toy.vocab().entity_count(),
        kg_toy.vocab().relation_count(),
        PolicyConfig {
            dim: 3,
            hidden: 3,
            lstm_layers: 2,
            anticipation: AnticipationStrategy::Average,
            completion: CompletionConfig::off(),
            action_dropout: 0.0,
        },
        &mut prng,
    )
    .unwrap();
    let a_ent = kg_toy.vocab().entity_id("a").unwrap();
    let r_rel = kg_toy.vocab().relation_id("r").unwrap();
    let c_ent = kg_toy.vocab().entity_id("c").unwrap();
    let e_p = Tensor::from_vec(&[1, 3], vec![0.2, -0.1, 0.3]).unwrap();
    let query = Query { head: a_ent, relation: r_rel };
    let mut pstore = policy.store.clone();
    {
        // Rebind the loss builder over a cloned store so fd_check can
        // perturb the parameters the policy methods read.
        let policy_ref = &policy;
        let kg_ref = &kg_toy;
        fd_check(
            &mut pstore,
            move |t, s| {
                // Policy methods read `policy.store`; swap in the perturbed
                // values before each forward pass.
                let mut p = policy_ref.clone();
                p.store = s.clone();
                let enc = p.begin(t, &[a_ent]).unwrap();
                let state = p
                    .encode_states(t, enc.top, &[r_rel], &[a_ent], Some(&e_p))
                    .unwrap();
                let space =
                    build_action_space(kg_ref, query, c_ent, a_ent, 0, GoldMask::EveryStep, &[]);
                let rels: Vec<usize> = space.actions.iter().map(|x| x.relation).collect();
                let ents: Vec<usize> = space.actions.iter().map(|x| x.entity).collect();
                let probs = p
                    .score_actions(t, state, &rels, &ents, space.len(), &vec![true; space.len()])
                    .unwrap();
                let ent_term = t.entropy_mean(probs, &vec![true; space.len()]).unwrap();
                let lp = t.log_guarded(probs);
                let picked = t.gather_rows(lp, &[0]).unwrap();
                let loss = reinforce_loss(t, picked, &[0.7], Some((ent_term, 0.01))).unwrap();
                loss
            },
            "composed policy loss",
        );
    }

    // Composed score-model losses.
    let mut mrng = Rng::seed_from_u64(77);
    let dm: KgeModel<f64> =
        KgeModel::new(KgeKind::DistMult, 5, 4, 3, ConvEShape::default(), &mut mrng).unwrap();
    let mut targets = Tensor::full(&[2, 5], 0.02);
    targets.row_mut(0)[1] = 0.98;
    targets.row_mut(1)[4] = 0.98;
    let mut dstore = dm.store.clone();
    fd_check(
        &mut dstore,
        |t, s| {
            let mut m = dm.clone();
            m.store = s.clone();
            let mut r = Rng::seed_from_u64(0);
            let logits = m.batch_tail_logits(t, &[0, 3], &[1, 2], &mut r).unwrap();
            t.bce_with_logits(logits, &targets).unwrap()
        },
        "composed distmult loss",
    );
    let shape = ConvEShape {
        rows: 2,
        cols: 3,
        channels: 2,
        kernel: 2,
        input_dropout: 0.0,
        feature_dropout: 0.0,
        hidden_dropout: 0.0,
    };
    let cv: KgeModel<f64> = KgeModel::new(KgeKind::ConvE, 4, 3, 6, shape, &mut mrng).unwrap();
    let mut ctargets = Tensor::full(&[2, 4], 0.025);
    ctargets.row_mut(0)[2] = 0.975;
    ctargets.row_mut(1)[0] = 0.975;
    let mut cstore = cv.store.clone();
    fd_check(
        &mut cstore,
        |t, s| {
            let mut m = cv.clone();
            m.store = s.clone();
            let mut r = Rng::seed_from_u64(0);
            let logits = m.batch_tail_logits(t, &[0, 2], &[0, 1], &mut r).unwrap();
            t.bce_with_logits(logits, &ctargets).unwrap()
        },
        "composed conve loss",
    );

    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < 60,
        "gradient suite took {elapsed:?}, budget is one minute"
    );
    println!("ACCEPTANCE gradient suite: PASS ({elapsed:?})");
}

// ---------------------------------------------------------------------------
// Criterion: pruning arithmetic, exact.
// ---------------------------------------------------------------------------

#[test]
fn criterion_pruning_arithmetic() {
    // (N=10, alpha=0.33, M=20, k=2) -> budget 4, probes 2
    let budget = added_action_budget(10, 0.33, 20);
    assert_eq!(budget, 4);
    assert_eq!(relations_to_probe(budget, 2), 2);
    // (N=100, alpha=0.5, M=20, k=5) -> budget 20, probes 4
    let budget = added_action_budget(100, 0.5, 20);
    assert_eq!(budget, 20);
    assert_eq!(relations_to_probe(budget, 5), 4);
    println!("ACCEPTANCE pruning arithmetic: PASS");
}

// ---------------------------------------------------------------------------
// Criterion: ranking oracle on 20 random toy graphs.
// ---------------------------------------------------------------------------

fn random_kg(entities: usize, relations: usize, edges: usize, seed: u64) -> KnowledgeGraph {
    let mut rng = Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    while seen.len() < edges {
        let h = rng.below(entities);
        let r = rng.below(relations);
        let t = rng.below(entities);
        if h == t || !seen.insert((h, r, t)) {
            continue;
        }
        let raw: RawTriple = (format!("e{h}"), format!("r{r}"), format!("e{t}"));
        if seen.len() % 5 == 0 && !train.is_empty() {
            test.push(raw);
        } else {
            train.push(raw);
        }
    }
    let (kg, _) = KnowledgeGraph::build(&train, &[], &test, GraphConfig::default());
    kg
}

/// Exhaustive fixed-length enumeration with per-prefix forward passes.
fn enumerate_paths(
    kg: &KnowledgeGraph,
    policy: &PolicyNetwork<f64>,
    cache: &mut ScoreCache<'_, f64>,
    query: Query,
    max_hops: usize,
    e_p: &Tensor<f64>,
) -> Vec<BeamEntry> {
    struct Prefix {
        current: EntityId,
        log_prob: f64,
        hops: Vec<(RelationId, EntityId, kghop_core::kg::Origin)>,
        lstm: Vec<(Tensor<f64>, Tensor<f64>)>,
    }
    let batch1 = |policy: &PolicyNetwork<f64>, v: &[(Tensor<f64>, Tensor<f64>)], tape: &mut Tape<f64>| {
        let layered: Vec<(Tensor<f64>, Tensor<f64>)> = v
            .iter()
            .map(|(h, c)| {
                (
                    Tensor::from_vec(&[1, policy.cfg.hidden], h.data().to_vec()).unwrap(),
                    Tensor::from_vec(&[1, policy.cfg.hidden], c.data().to_vec()).unwrap(),
                )
            })
            .collect();
        policy.encoding_from_values(tape, layered)
    };
    let init = {
        let mut tape = Tape::new(false);
        let enc = policy.begin(&mut tape, &[query.head]).unwrap();
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
    let mut frontier = vec![Prefix {
        current: query.head,
        log_prob: 0.0,
        hops: Vec::new(),
        lstm: init,
    }];
    for hop in 0..max_hops {
        let mut next = Vec::new();
        for prefix in &frontier {
            let mut tape = Tape::new(false);
            let enc = batch1(policy, &prefix.lstm, &mut tape);
            let block = if policy.uses_anticipation() {
                Some(Tensor::from_vec(&[1, policy.cfg.dim], e_p.data().to_vec()).unwrap())
            } else {
                None
            };
            let state = policy
                .encode_states(&mut tape, enc.top, &[query.relation], &[prefix.current], block.as_ref())
                .unwrap();
            let mut space =
                build_action_space(kg, query, query.head, prefix.current, hop, GoldMask::Never, &[]);
            if policy.cfg.completion.enabled() {
                let att_node = policy
                    .relation_attention(&mut tape, state, kg.vocab().base_relation_count())
                    .unwrap();
                let att: Vec<f64> = tape.value(att_node).row(0).to_vec();
                let proposals =
                    policy.propose_completions(&att, prefix.current, space.len(), kg, cache);
                for p in proposals {
                    if !space
                        .actions
                        .iter()
                        .any(|a| a.relation == p.relation && a.entity == p.entity)
                    {
                        space.actions.push(p);
                    }
                }
            }
            let width = space.len();
            let rels: Vec<usize> = space.actions.iter().map(|a| a.relation).collect();
            let ents: Vec<usize> = space.actions.iter().map(|a| a.entity).collect();
            let probs = policy
                .score_actions(&mut tape, state, &rels, &ents, width, &vec![true; width])
                .unwrap();
            for (col, act) in space.actions.iter().enumerate() {
                let p = tape.value(probs).row(0)[col];
                let lp = libm::log(p.max(1e-300));
                let mut adv = Tape::new(false);
                let prev = batch1(policy, &prefix.lstm, &mut adv);
                let stepped = policy
                    .advance(&mut adv, &prev, &[act.relation], &[act.entity])
                    .unwrap();
                let lstm: Vec<(Tensor<f64>, Tensor<f64>)> = stepped
                    .layers
                    .iter()
                    .map(|&(h, c)| {
                        (
                            Tensor::from_vec(&[policy.cfg.hidden], adv.value(h).row(0).to_vec())
                                .unwrap(),
                            Tensor::from_vec(&[policy.cfg.hidden], adv.value(c).row(0).to_vec())
                                .unwrap(),
                        )
                    })
                    .collect();
                let mut hops = prefix.hops.clone();
                hops.push((act.relation, act.entity, act.origin));
                next.push(Prefix {
                    current: act.entity,
                    log_prob: prefix.log_prob + lp,
                    hops,
                    lstm,
                });
            }
        }
        frontier = next;
    }
    let mut out: Vec<BeamEntry> = frontier
        .into_iter()
        .map(|p| BeamEntry {
            hops: p.hops,
            log_prob: p.log_prob,
        })
        .collect();
    out.sort_by(|a, b| {
        b.log_prob.total_cmp(&a.log_prob).then_with(|| {
            let ka: Vec<(usize, usize)> = a.hops.iter().map(|&(r, e, _)| (r, e)).collect();
            let kb: Vec<(usize, usize)> = b.hops.iter().map(|&(r, e, _)| (r, e)).collect();
            ka.cmp(&kb)
        })
    });
    out
}

#[test]
fn criterion_ranking_oracle() {
    let started = Instant::now();
    let max_hops = 3;
    for case in 0..20u64 {
        let entities = 10 + (case as usize % 6) * 8; // 10..50
        let kg = random_kg(entities, 4, entities * 2, 9000 + case);
        let mut rng = Rng::seed_from_u64(case);
        let kge: KgeModel<f64> = KgeModel::new(
            KgeKind::DistMult,
            kg.vocab().entity_count(),
            kg.vocab().relation_count(),
            4,
            ConvEShape::default(),
            &mut rng,
        )
        .unwrap();
        let policy: PolicyNetwork<f64> = PolicyNetwork::new(
            kg.vocab().entity_count(),
            kg.vocab().relation_count(),
            PolicyConfig {
                dim: 4,
                hidden: 4,
                lstm_layers: 2,
                anticipation: AnticipationStrategy::TopOne,
                completion: CompletionConfig {
                    alpha: 0.33,
                    max_added: 5,
                    tails_per_relation: 2,
                },
                action_dropout: 0.0,
            },
            &mut rng,
        )
        .unwrap();

        // Beam with exhaustive width equals enumeration on the first query.
        let mut cache = ScoreCache::new(&kge);
        let t0 = kg.split(Split::Test)[0];
        let query = Query { head: t0.head, relation: t0.relation };
        let mut arng = Rng::seed_from_u64(1);
        let e_p = anticipate(&mut cache, t0.head, t0.relation, policy.cfg.anticipation, &mut arng);
        let oracle = enumerate_paths(&kg, &policy, &mut cache, query, max_hops, &e_p);
        let beams =
            beam_search(&kg, &policy, &mut cache, query, oracle.len() + 3, max_hops, &e_p).unwrap();
        assert_eq!(beams.len(), oracle.len(), "case {case}");
        for (bm, or) in beams.iter().zip(oracle.iter()) {
            let sig = |e: &BeamEntry| -> Vec<(usize, usize)> {
                e.hops.iter().map(|&(r, en, _)| (r, en)).collect()
            };
            assert_eq!(sig(bm), sig(or), "case {case}");
            assert_eq!(bm.log_prob, or.log_prob, "case {case}");
        }

        // Filtered metrics equal a brute-force recomputation exactly.
        let width = 8;
        let result = evaluate(&kg, &policy, &kge, Split::Test, width, max_hops, 42).unwrap();
        let mut orng = Rng::seed_from_u64(42);
        let mut ocache = ScoreCache::new(&kge);
        let mut ranks = Vec::new();
        for t in kg.split(Split::Test) {
            let q = Query { head: t.head, relation: t.relation };
            let e_p = anticipate(&mut ocache, t.head, t.relation, policy.cfg.anticipation, &mut orng);
            let beams = beam_search(&kg, &policy, &mut ocache, q, width, max_hops, &e_p).unwrap();
            let reached = best_terminals(&beams, q.head);
            let known = kg.filter_candidates(t.head, t.relation);
            let candidates: Vec<EntityId> = (0..kg.vocab().entity_count())
                .filter(|e| *e == t.tail || !known.contains(e))
                .collect();
            let mut scored: Vec<(EntityId, f64)> = candidates
                .iter()
                .filter_map(|&e| reached.get(&e).map(|&sc| (e, sc)))
                .collect();
            scored.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
            let rank = match scored.iter().position(|&(e, _)| e == t.tail) {
                Some(pos) => (pos + 1) as f64,
                None => {
                    let unreached = candidates.len() - scored.len();
                    let mut total = 0.0;
                    for pos in 1..=unreached {
                        total += (scored.len() + pos) as f64;
                    }
                    total / unreached as f64
                }
            };
            ranks.push(rank);
        }
        let n = ranks.len() as f64;
        let mrr: f64 = ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n;
        let hits = |k: f64| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        assert_eq!(result.mrr, mrr, "case {case}");
        assert_eq!(result.hits1, hits(1.0), "case {case}");
        assert_eq!(result.hits3, hits(3.0), "case {case}");
        assert_eq!(result.hits10, hits(10.0), "case {case}");
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 120, "ranking oracle took {elapsed:?}");
    println!("ACCEPTANCE ranking oracle: PASS ({elapsed:?})");
}

// ---------------------------------------------------------------------------
// Criterion: policy-gradient direction on a 2-action bandit.
// ---------------------------------------------------------------------------

#[test]
fn criterion_policy_gradient_direction() {
    let prob_of_first = |store: &ParamStore<f64>| -> f64 {
        let logits = store.value(store.id_of("logits").unwrap());
        let a = logits.data()[0];
        let b = logits.data()[1];
        let m = a.max(b);
        let ea = (a - m).exp();
        let eb = (b - m).exp();
        ea / (ea + eb)
    };

    // One expectation-weighted step strictly increases the rewarded action's
    // probability for any small positive rate.
    for beta in [1e-3, 1e-2] {
        let mut store: ParamStore<f64> = ParamStore::new();
        store
            .insert("logits", Tensor::from_vec(&[1, 2], vec![0.1, -0.2]).unwrap(), true)
            .unwrap();
        let logits = store.id_of("logits").unwrap();
        let p0 = prob_of_first(&store);
        let mut adam = Adam::new(beta);
        let mut tape = Tape::new(true);
        let x = tape.param(&store, logits);
        let stacked = tape.reshape(x, &[1, 2]).unwrap();
        let probs = tape.softmax(stacked).unwrap();
        let p_now = tape.value(probs).data().to_vec();
        let lp = tape.log_guarded(probs);
        // Pseudo-episodes: both actions, advantages weighted by their
        // probability and reward (1, 0) — the exact expected gradient.
        let both = tape.reshape(lp, &[2, 1]).unwrap();
        let picked = tape.gather_rows(both, &[0, 0]).unwrap();
        let loss = reinforce_loss(&mut tape, picked, &[p_now[0] * 1.0, p_now[1] * 0.0], None).unwrap();
        store.zero_grads();
        tape.backward(loss, &mut store).unwrap();
        adam.step(&mut store);
        let p1 = prob_of_first(&store);
        assert!(p1 > p0, "beta {beta}: expected step did not increase {p0} -> {p1}");
    }

    // 100 sampled REINFORCE steps with rewards (1, 0).
    for beta in [1e-3, 1e-2] {
        let mut store: ParamStore<f64> = ParamStore::new();
        store
            .insert("logits", Tensor::from_vec(&[1, 2], vec![0.0, 0.0]).unwrap(), true)
            .unwrap();
        let logits = store.id_of("logits").unwrap();
        let mut adam = Adam::new(beta);
        let mut rng = Rng::seed_from_u64(7);
        let initial = prob_of_first(&store);
        for _ in 0..100 {
            let mut tape = Tape::new(true);
            let x = tape.param(&store, logits);
            let row = tape.reshape(x, &[1, 2]).unwrap();
            let probs = tape.softmax(row).unwrap();
            let pvals = tape.value(probs).data().to_vec();
            let rollouts = 32;
            let mut chosen = Vec::with_capacity(rollouts);
            let mut advantages = Vec::with_capacity(rollouts);
            for _ in 0..rollouts {
                let a = rng.pick_weighted(&pvals);
                chosen.push(a);
                advantages.push(if a == 0 { 1.0 } else { 0.0 });
            }
            // One row per episode so gather_rows can pick each choice.
            let tiled = tape.concat_last(&vec![row; rollouts]).unwrap();
            let grid = tape.reshape(tiled, &[rollouts, 2]).unwrap();
            let gprobs = tape.softmax(grid).unwrap();
            let glp = tape.log_guarded(gprobs);
            let picked = tape.gather_rows(glp, &chosen).unwrap();
            let loss = reinforce_loss(&mut tape, picked, &advantages, None).unwrap();
            store.zero_grads();
            tape.backward(loss, &mut store).unwrap();
            adam.step(&mut store);
        }
        let after = prob_of_first(&store);
        assert!(
            after > initial,
            "beta {beta}: {initial} -> {after} is not a strict increase"
        );
        println!("  beta {beta}: p(rewarded) {initial:.4} -> {after:.4}");
    }
    println!("ACCEPTANCE policy-gradient direction: PASS");
}

// ---------------------------------------------------------------------------
// Criterion: determinism — identical seeds give bit-identical reports and
// metrics across two consecutive runs.
// ---------------------------------------------------------------------------

#[test]
fn criterion_determinism() {
    let kg = compositional_kg(555, 1.0);
    let kge = world_kge(&kg, 9);
    let run = || -> (Vec<EpochReport>, String) {
        let mut policy = fresh_policy(
            &kg,
            AnticipationStrategy::Sample,
            CompletionConfig {
                alpha: 0.5,
                max_added: 20,
                tails_per_relation: 2,
            },
            3,
        );
        let outcome = train(&kg, &mut policy, &kge, &agent_config(3, 3), None).unwrap();
        let metrics = evaluate(&kg, &policy, &kge, Split::Valid, 16, 3, 3).unwrap();
        let metrics_json = serde_json::to_string(&serde_json::json!({
            "mrr": metrics.mrr,
            "hits1": metrics.hits1,
            "hits3": metrics.hits3,
            "hits10": metrics.hits10,
        }))
        .unwrap();
        (outcome.reports, metrics_json)
    };
    let (r1, m1) = run();
    let (r2, m2) = run();
    assert_eq!(r1, r2, "epoch reports differ between identical runs");
    assert_eq!(m1, m2, "metrics differ between identical runs");
    let json1 = serde_json::to_string(&r1).unwrap();
    let json2 = serde_json::to_string(&r2).unwrap();
    assert_eq!(json1, json2);
    println!("ACCEPTANCE determinism: PASS ({} epochs compared)", r1.len());
}

// ---------------------------------------------------------------------------
// Criterion: learnability — the full method reaches Hits@1 >= 0.9 on
// held-out composition queries, median over 3 seeds.
// ---------------------------------------------------------------------------

#[test]
fn criterion_learnability() {
    let started = Instant::now();
    let kg = compositional_kg(1234, 1.0);
    let kge = world_kge(&kg, 7);
    let mut scores = Vec::new();
    for seed in [11u64, 22, 33] {
        let mut policy = fresh_policy(
            &kg,
            AnticipationStrategy::Sample,
            CompletionConfig {
                alpha: 0.5,
                max_added: 20,
                tails_per_relation: 2,
            },
            seed,
        );
        train(&kg, &mut policy, &kge, &agent_config(seed, 150), None).unwrap();
        let result = evaluate(&kg, &policy, &kge, Split::Test, 64, 3, seed).unwrap();
        println!("  seed {seed}: held-out Hits@1 {:.3}", result.hits1);
        scores.push(result.hits1);
    }
    let med = median(scores);
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 600, "learnability run took {elapsed:?}");
    assert!(med >= 0.9, "median held-out Hits@1 {med} < 0.9");
    println!("ACCEPTANCE learnability: PASS (median Hits@1 {med:.3}, {elapsed:?})");
}

// ---------------------------------------------------------------------------
// Criterion: sparsity benefit — with half the second-hop evidence removed,
// the full method strictly beats the no-completion ablation on valid
// Hits@10, which in turn is at least the no-anticipation-no-completion
// cell; medians over 3 seeds.
// ---------------------------------------------------------------------------

#[test]
fn criterion_sparsity_benefit() {
    let kg = compositional_kg(1234, 0.5);
    let kge = world_kge(&kg, 7);
    let cell = |anticipation: AnticipationStrategy, alpha: f64, seed: u64| -> f64 {
        let completion = CompletionConfig {
            alpha,
            max_added: 20,
            tails_per_relation: 2,
        };
        let mut policy = fresh_policy(&kg, anticipation, completion, seed);
        train(&kg, &mut policy, &kge, &agent_config(seed, 100), None).unwrap();
        evaluate(&kg, &policy, &kge, Split::Valid, 64, 3, seed)
            .unwrap()
            .hits10
    };
    let seeds = [11u64, 22, 33];
    let full: Vec<f64> = seeds
        .iter()
        .map(|&s| cell(AnticipationStrategy::Sample, 0.5, s))
        .collect();
    let no_dc: Vec<f64> = seeds
        .iter()
        .map(|&s| cell(AnticipationStrategy::Sample, 0.0, s))
        .collect();
    let no_both: Vec<f64> = seeds
        .iter()
        .map(|&s| cell(AnticipationStrategy::Off, 0.0, s))
        .collect();
    let (m_full, m_no_dc, m_no_both) = (
        median(full.clone()),
        median(no_dc.clone()),
        median(no_both.clone()),
    );
    println!(
        "  valid Hits@10 medians: full {m_full:.3} | no-completion {m_no_dc:.3} | plain {m_no_both:.3}"
    );
    println!("  per-seed full {full:?} no_dc {no_dc:?} no_both {no_both:?}");
    assert!(
        m_full > m_no_dc,
        "full ({m_full}) must strictly beat the no-completion ablation ({m_no_dc})"
    );
    assert!(
        m_no_dc >= m_no_both,
        "no-completion ({m_no_dc}) must be at least the plain walker ({m_no_both})"
    );
    println!("ACCEPTANCE sparsity benefit: PASS");
}

// ---------------------------------------------------------------------------
// Criterion: completion-choice ratio is non-decreasing in alpha (last-5
// epoch average) on the sparsified world.
// ---------------------------------------------------------------------------

#[test]
fn criterion_dc_ratio_trend() {
    let kg = compositional_kg(1234, 0.5);
    let kge = world_kge(&kg, 7);
    let mut runs: Vec<(f64, Vec<EpochReport>)> = Vec::new();
    for alpha in [0.2, 0.33, 0.5] {
        let mut policy = fresh_policy(
            &kg,
            AnticipationStrategy::Sample,
            CompletionConfig {
                alpha,
                max_added: 20,
                tails_per_relation: 2,
            },
            5,
        );
        let outcome = train(&kg, &mut policy, &kge, &agent_config(5, 30), None).unwrap();
        runs.push((alpha, outcome.reports));
    }
    let table = ratio_vs_alpha(&runs, 5);
    println!("  ratio vs alpha: {table:?}");
    for pair in table.windows(2) {
        assert!(
            pair[1].1 >= pair[0].1,
            "completion-choice ratio decreased from alpha {} to {}",
            pair[0].0,
            pair[1].0
        );
    }
    println!("ACCEPTANCE completion-ratio trend: PASS");
}

// ---------------------------------------------------------------------------
// Criterion (optional, long-running): full-scale reference run. Needs the
// real dataset on disk and several hours of compute.
// ---------------------------------------------------------------------------

#[test]
#[ignore = "multi-hour full-scale reference run; set KGHOP_WDSINGER_DIR to a directory with train.txt/valid.txt/test.txt"]
fn criterion_full_scale_reference() {
    let dir = std::env::var("KGHOP_WDSINGER_DIR")
        .expect("KGHOP_WDSINGER_DIR must point at the dataset");
    let dir = std::path::Path::new(&dir);
    let read = |name: &str| -> Vec<RawTriple> {
        let text = std::fs::read_to_string(dir.join(name)).expect("dataset file");
        kghop_core::kg::parse_triples(&text).expect("well-formed TSV")
    };
    let (kg, _) = KnowledgeGraph::build(
        &read("train.txt"),
        &read("valid.txt"),
        &read("test.txt"),
        GraphConfig::default(),
    );
    let kge_cfg = KgeConfig {
        kind: KgeKind::ConvE,
        dim: 200,
        lr: 1e-3,
        epochs: 300,
        batch_size: 128,
        eval_every: 5,
        patience: 5,
        seed: 1,
        ..KgeConfig::default()
    };
    let (kge, _) = train_kge::<f32>(&kg, &kge_cfg).unwrap();
    let mut policy = PolicyNetwork::new(
        kg.vocab().entity_count(),
        kg.vocab().relation_count(),
        PolicyConfig {
            dim: 200,
            hidden: 200,
            lstm_layers: 3,
            anticipation: AnticipationStrategy::Sample,
            completion: CompletionConfig {
                alpha: 0.33,
                max_added: 20,
                tails_per_relation: 2,
            },
            action_dropout: 0.1,
        },
        &mut Rng::seed_from_u64(2),
    )
    .unwrap();
    let cfg = TrainConfig {
        epochs: 50,
        batch_size: 128,
        rollouts: 20,
        lr: 1e-3,
        max_hops: 3,
        entropy_weight: 0.02,
        baseline: BaselineMode::MovingAverage { decay: 0.95 },
        gold_mask: GoldMask::EveryStep,
        seed: 2,
        eval_every: 5,
        eval_beam_width: 128,
    };
    train(&kg, &mut policy, &kge, &cfg, None).unwrap();
    let result = evaluate(&kg, &policy, &kge, Split::Test, 128, 3, 2).unwrap();
    println!(
        "full-scale reference: MRR {:.3} Hits@10 {:.3}",
        result.mrr, result.hits10
    );
    assert!((result.mrr - 0.381).abs() <= 0.03);
    assert!((result.hits10 - 0.506).abs() <= 0.03);
    println!("ACCEPTANCE full-scale reference: PASS");
}
