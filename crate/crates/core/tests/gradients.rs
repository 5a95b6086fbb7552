//! Finite-difference gradient checks for every tape op.
//!
//! Each op is embedded in a scalar loss built from 64-bit parameters; the
//! analytic gradients from `Tape::backward` must match central finite
//! differences at 5 random points within 1e-4 relative error.

use kghop_core::autodiff::{BnAxes, LstmLayer, ParamStore, Tape};
use kghop_core::rng::Rng;
use kghop_core::tensor::Tensor;


type Node = kghop_core::autodiff::NodeId;

const REL_TOL: f64 = 1e-4;
const ABS_TOL: f64 = 1e-7;
const H: f64 = 1e-5;

/// Dot the (flattened) node with a fixed pseudo-random vector so gradients
/// are not symmetric, then reduce to a scalar.
fn pin_loss(tape: &mut Tape<f64>, x: Node, pin_seed: u64) -> Node {
    let n = tape.value(x).numel();
    let shape = tape.value(x).shape().to_vec();
    let mut rng = Rng::seed_from_u64(pin_seed);
    let weights: Vec<f64> = (0..n).map(|_| rng.uniform() * 2.0 - 1.0).collect();
    let w = tape.constant(Tensor::from_vec(&shape, weights).unwrap());
    let prod = tape.mul(x, w).unwrap();
    tape.sum_all(prod)
}

/// Run the builder analytically and by central differences over every
/// parameter element; assert elementwise agreement.
fn check_gradients(
    store: &mut ParamStore<f64>,
    build: impl Fn(&mut Tape<f64>, &mut ParamStore<f64>) -> Node,
    label: &str,
) {
    store.zero_grads();
    let mut tape = Tape::new(true);
    let loss = build(&mut tape, store);
    assert!(
        tape.value(loss).is_scalar(),
        "{label}: builder must produce a scalar loss"
    );
    tape.backward(loss, store).unwrap();

    let analytic: Vec<Vec<f64>> = store.iter().map(|(_, e)| e.grad.data().to_vec()).collect();
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();

    for (pi, id) in ids.iter().enumerate() {
        let n = store.value(*id).numel();
        for k in 0..n {
            let orig = store.value(*id).data()[k];
            let h = H * orig.abs().max(1.0);

            store.value_mut(*id).data_mut()[k] = orig + h;
            let mut t_plus = Tape::new(true);
            let l_plus = build(&mut t_plus, store);
            let f_plus = t_plus.value(l_plus).scalar_value();

            store.value_mut(*id).data_mut()[k] = orig - h;
            let mut t_minus = Tape::new(true);
            let l_minus = build(&mut t_minus, store);
            let f_minus = t_minus.value(l_minus).scalar_value();

            store.value_mut(*id).data_mut()[k] = orig;

            let fd = (f_plus - f_minus) / (2.0 * h);
            let a = analytic[pi][k];
            let err = (a - fd).abs();
            let tol = REL_TOL * a.abs().max(fd.abs()) + ABS_TOL;
            assert!(
                err <= tol,
                "{label}: param {pi} element {k}: analytic {a} vs fd {fd} (err {err:.3e})"
            );
        }
    }
}

fn param(store: &mut ParamStore<f64>, name: &str, shape: &[usize], rng: &mut Rng) {
    let t = Tensor::xavier(shape, rng);
    store.insert(name, t, true).unwrap();
}

/// Parameters drawn away from zero so relu/abs kinks are not sampled.
fn param_off_zero(store: &mut ParamStore<f64>, name: &str, shape: &[usize], rng: &mut Rng) {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let v = rng.uniform() * 0.8 + 0.2;
            if rng.bernoulli(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    store
        .insert(name, Tensor::from_vec(shape, data).unwrap(), true)
        .unwrap();
}

fn positive_param(store: &mut ParamStore<f64>, name: &str, shape: &[usize], rng: &mut Rng) {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.uniform() * 2.0 + 0.1).collect();
    store
        .insert(name, Tensor::from_vec(shape, data).unwrap(), true)
        .unwrap();
}

const POINTS: [u64; 5] = [11, 23, 47, 91, 183];

#[test]
fn grad_elementwise_arithmetic() {
    for seed in POINTS {
        let mut rng = Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        param(&mut store, "a", &[2, 3], &mut rng);
        param(&mut store, "b", &[2, 3], &mut rng);
        let a = store.id_of("a").unwrap();
        let b = store.id_of("b").unwrap();
        check_gradients(
            &mut store,
            |tape, store| {
                let an = tape.param(store, a);
                let bn = tape.param(store, b);
                let s = tape.add(an, bn).unwrap();
                let d = tape.sub(s, bn).unwrap();
                let m = tape.mul(d, bn).unwrap();
                let n = tape.neg(m);
                let sc = tape.scale(n, -1.7);
                let sh = tape.add_scalar(sc, 0.3);
                pin_loss(tape, sh, seed)
            },
            "elementwise",
        );
    }
}

#[test]
fn grad_add_row_broadcast() {
    for seed in POINTS {
        let mut rng = Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        param(&mut store, "x", &[3, 4], &mut rng);
        param(&mut store, "b", &[4], &mut rng);
        let x = store.id_of("x").unwrap();
        let b = store.id_of("b").unwrap();
        check_gradients(
            &mut store,
            |tape, store| {
                let xn = tape.param(store, x);
                let bn = tape.param(store, b);
                let y = tape.add_row(xn, bn).unwrap();
                pin_loss(tape, y, seed)
            },
            "add_row",
        );
    }
}

#[test]
fn grad_matmul_both_sides() {
    for seed in POINTS {
        let mut rng = Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        param(&mut store, "a", &[3, 4], &mut rng);
        param(&mut store, "b", &[4, 2], &mut rng);
        let a = store.id_of("a").unwrap();
        let b = store.id_of("b").unwrap();
        check_gradients(
            &mut store,
            |tape, store| {
                let an = tape.param(store, a);
                let bn = tape.param(store, b);
                let y = tape.matmul(an, bn).unwrap();
                pin_loss(tape, y, seed)
            },
            "matmul",
        );
    }
}

#[test]
fn grad_matmul_nt_and_linear() {
    for seed in POINTS {
        let mut rng = Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        param(&mut store, "x", &[3, 4], &mut rng);
        param(&mut store, "w", &[5, 4], &mut rng);
        param(&mut store, "b", &[5], &mut rng);
        let x = store.id_of("x").unwrap();
        let w = store.id_of("w").unwrap();
        let b = store.id_of("b").unwrap();
        check_gradients(
            &mut store,
            |tape, store| {
                let xn = tape.param(store, x);
                let y = tape.linear(store, xn, w, Some(b)).unwrap();
                pin_loss(tape, y, seed)
            },
            "linear",
        );
    }
}

#[test]
fn grad_embedding_lookup_with_repeats() {
    for seed in POINTS {
        let mut rng = Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        param(&mut store, "table", &[6, 3], &mut rng);
        let table = store.id_of("table").unwrap();
        check_gradients(
            &mut store,
            |tape, store| {
                let e = tape.lookup(store, table, &[4, 0, 4, 2]);
                pin_loss(tape, e, seed)
            },
            "lookup",
        );
    }
}

#[test]
fn grad_concat_slice_reshape() {
    for seed in POINTS {
        let mut rng = Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        param(&mut store, "a", &[2, 3], &mut rng);
        param(&mut store, "b", &[2, 2], &mut rng);
        let a = store.id_of("a").unwrap();
        let b = store.id_of("b").unwrap();
        check_gradients(
            &mut store,
            |tape, store| {
                let an = tape.param(store, a);
                let bn = tape.param(store, b);
                let cat = tape.concat_last(&[an, bn]).unwrap();
                let sl = tape.slice_last(cat, 1, 3).unwrap();
                let rs = tape.reshape(sl, &[3, 2]).unwrap();
                pin_loss(tape, rs, seed)
            },
            "concat/slice/reshape",
        );
    }
}

#[test]
fn grad_activations() {
    for seed in POINTS {
        let mut rng = Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        param_off_zero(&mut store, "x", &[2, 4], &mut rng);
        let x = store.id_of("x").unwrap();
        check_gradients(
            &mut store,
            |tape, store| {
                let xn = tape.param(store, x);
                let r = tape.relu(xn);
                let s = tape.sigmoid(r);
                let t = tape.tanh_op(s);
                let q = tape.square(t);
                pin_loss(tape, q, seed)
            },
            "relu/sigmoid/tanh/square",
        );
    }
}

#[test]
fn grad_abs_away_from_zero() {
    for seed in POINTS {
        let mut rng = Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        param_off_zero(&mut store, "x", &[3, 3], &mut rng);
        let x = store.id_of("x").unwrap();
        check_gradients(
            &mut store,
            |tape, store| {
                let xn = tape.param(store, x);
                let y = tape.abs_op(xn);
                pin_loss(tape, y, seed)
            },
            "abs",
        );
    }
}

#[test]
fn grad_log_on_positive_inputs() {
    for seed in POINTS {
        let mut rng = Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        positive_param(&mut store, "x", &[2, 3], &mut rng);
        let x = store.id_of("x").unwrap();
        check_gradients(
            &mut store,
            |tape, store| {
                let xn = tape.param(store, x);
                let y = tape.log_guarded(xn);
                pin_loss(tape, y, seed)
            },
            "log",
        );
    }
}

#[test]
fn grad_reductions_and_gather() {
    for seed in POINTS {
        let mut rng = Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        param(&mut store, "x", &[3, 4], &mut rng);
        let x = store.id_of("x").unwrap();
        check_gradients(
            &mut store,
            |tape, store| {
                let xn = tape.param(store, x);
                let rows = tape.sum_last(xn);
                let picked = tape.gather_rows(xn, &[3, 0, 2]).unwrap();
                let m = tape.mean_all(picked);
                let s = tape.sum_all(rows);
                let both = tape.add(m, s).unwrap();
                pin_loss(tape, both, seed)
            },
            "sum_last/gather_rows/mean_all",
        );
    }
}

#[test]
fn grad_stack_rows() {
    for seed in POINTS {
        let mut rng = Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        param(&mut store, "a", &[3], &mut rng);
        param(&mut store, "b", &[3], &mut rng);
        let a = store.id_of("a").unwrap();
        let b = store.id_of("b").unwrap();
        check_gradients(
            &mut store,
            |tape, store| {
                let an = tape.param(store, a);
                let bn = tape.param(store, b);
                let stacked = tape.stack_rows(&[an, bn, an]).unwrap();
                pin_loss(tape, stacked, seed)
            },
            "stack_rows",
        );
    }
}

#[test]
fn grad_score_rows() {
    for seed in POINTS {
        let mut rng = Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        param(&mut store, "actions", &[2, 3, 4], &mut rng);
        param(&mut store, "state", &[2, 4], &mut rng);
        let a = store.id_of("actions").unwrap();
        let s = store.id_of("state").unwrap();
        check_gradients(
            &mut store,
            |tape, store| {
                let an = tape.param(store, a);
                let sn = tape.param(store, s);
                let scores = tape.score_rows(an, sn).unwrap();
                pin_loss(tape, scores, seed)
            },
            "score_rows",
        );
    }
}

#[test]
fn grad_masked_softmax() {
    let mask = [true, false, true, true, true, true, true, false];
    for seed in POINTS {
        let mut rng = Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        param(&mut store, "logits", &[2, 4], &mut rng);
        let x = store.id_of("logits").unwrap();
        check_gradients(
            &mut store,
            |tape, store| {
                let xn = tape.param(store, x);
                let p = tape.masked_softmax(xn, &mask).unwrap();
                pin_loss(tape, p, seed)
            },
            "masked_softmax",
        );
    }
}

#[test]
fn grad_log_prob_of_sampled_action() {
    // The REINFORCE inner expression: ln softmax(logits)[chosen].
    for seed in POINTS {
        let mut rng = Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        param(&mut store, "logits", &[3, 5], &mut rng);
        let x = store.id_of("logits").unwrap();
        let mask = [
            true, true, false, true, true, //
            true, true, true, true, false, //
            true, false, true, true, true,
        ];
        check_gradients(
            &mut store,
            |tape, store| {
                let xn = tape.param(store, x);
                let p = tape.masked_softmax(xn, &mask).unwrap();
                let lp = tape.log_guarded(p);
                let picked = tape.gather_rows(lp, &[0, 3, 4]).unwrap();
                tape.sum_all(picked)
            },
            "log-prob",
        );
    }
}

#[test]
fn grad_cross_entropy() {
    for seed in POINTS {
        let mut rng = Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        param(&mut store, "logits", &[4, 6], &mut rng);
        let x = store.id_of("logits").unwrap();
        check_gradients(
            &mut store,
            |tape, store| {
                let xn = tape.param(store, x);
                tape.cross_entropy(xn, &[2, 0, 5, 1]).unwrap()
            },
            "cross_entropy",
        );
    }
}

#[test]
fn grad_bce_with_logits() {
    for seed in POINTS {
        let mut rng = Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        param(&mut store, "logits", &[3, 4], &mut rng);
        let x = store.id_of("logits").unwrap();
        let mut trng = Rng::seed_from_u64(seed ^ 0xffff);
        let targets = Tensor::from_vec(
            &[3, 4],
            (0..12)
                .map(|_| if trng.bernoulli(0.5) { 0.975 } else { 0.025 })
                .collect(),
        )
        .unwrap();
        check_gradients(
            &mut store,
            |tape, store| {
                let xn = tape.param(store, x);
                tape.bce_with_logits(xn, &targets).unwrap()
            },
            "bce_with_logits",
        );
    }
}

#[test]
fn grad_dropout_fixed_mask() {
    for seed in POINTS {
        let mut rng = Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        param(&mut store, "x", &[4, 4], &mut rng);
        let x = store.id_of("x").unwrap();
        check_gradients(
            &mut store,
            |tape, store| {
                let xn = tape.param(store, x);
                // Same seed per rebuild keeps the mask constant, which the
                // finite-difference oracle requires.
                let mut drop_rng = Rng::seed_from_u64(77);
                let y = tape.dropout(xn, 0.4, &mut drop_rng);
                pin_loss(tape, y, seed)
            },
            "dropout",
        );
    }
}

#[test]
fn grad_conv2d() {
    for seed in POINTS {
        let mut rng = Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        param(&mut store, "x", &[2, 2, 4, 5], &mut rng);
        param(&mut store, "w", &[3, 2, 2, 3], &mut rng);
        param(&mut store, "b", &[3], &mut rng);
        let x = store.id_of("x").unwrap();
        let w = store.id_of("w").unwrap();
        let b = store.id_of("b").unwrap();
        check_gradients(
            &mut store,
            |tape, store| {
                let xn = tape.param(store, x);
                let wn = tape.param(store, w);
                let bn = tape.param(store, b);
                let y = tape.conv2d(xn, wn, Some(bn)).unwrap();
                pin_loss(tape, y, seed)
            },
            "conv2d",
        );
    }
}

fn bn_stats(store: &mut ParamStore<f64>, features: usize) {
    store
        .insert("gamma", Tensor::full(&[features], 1.2), true)
        .unwrap();
    store
        .insert("beta", Tensor::full(&[features], -0.1), true)
        .unwrap();
    store
        .insert("rmean", Tensor::full(&[features], 0.3), false)
        .unwrap();
    store
        .insert("rvar", Tensor::full(&[features], 0.8), false)
        .unwrap();
}

#[test]
fn grad_batch_norm_per_feature_training() {
    for seed in POINTS {
        let mut rng = Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        param(&mut store, "x", &[5, 3], &mut rng);
        bn_stats(&mut store, 3);
        let x = store.id_of("x").unwrap();
        let gamma = store.id_of("gamma").unwrap();
        let beta = store.id_of("beta").unwrap();
        let rmean = store.id_of("rmean").unwrap();
        let rvar = store.id_of("rvar").unwrap();
        check_gradients(
            &mut store,
            |tape, store| {
                // Reset running stats so forward re-runs are at the same point.
                store.value_mut(rmean).fill(0.3);
                store.value_mut(rvar).fill(0.8);
                let xn = tape.param(store, x);
                let y = tape
                    .batch_norm(
                        store,
                        xn,
                        gamma,
                        beta,
                        rmean,
                        rvar,
                        BnAxes::PerFeature,
                        0.1,
                        1e-5,
                    )
                    .unwrap();
                pin_loss(tape, y, seed)
            },
            "batch_norm 1d train",
        );
    }
}

#[test]
fn grad_batch_norm_per_channel_training() {
    for seed in POINTS {
        let mut rng = Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        param(&mut store, "x", &[2, 3, 2, 2], &mut rng);
        bn_stats(&mut store, 3);
        let x = store.id_of("x").unwrap();
        let gamma = store.id_of("gamma").unwrap();
        let beta = store.id_of("beta").unwrap();
        let rmean = store.id_of("rmean").unwrap();
        let rvar = store.id_of("rvar").unwrap();
        check_gradients(
            &mut store,
            |tape, store| {
                store.value_mut(rmean).fill(0.3);
                store.value_mut(rvar).fill(0.8);
                let xn = tape.param(store, x);
                let y = tape
                    .batch_norm(
                        store,
                        xn,
                        gamma,
                        beta,
                        rmean,
                        rvar,
                        BnAxes::PerChannel,
                        0.1,
                        1e-5,
                    )
                    .unwrap();
                pin_loss(tape, y, seed)
            },
            "batch_norm 2d train",
        );
    }
}

#[test]
fn grad_batch_norm_eval_mode() {
    for seed in POINTS {
        let mut rng = Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        param(&mut store, "x", &[4, 3], &mut rng);
        bn_stats(&mut store, 3);
        let x = store.id_of("x").unwrap();
        let gamma = store.id_of("gamma").unwrap();
        let beta = store.id_of("beta").unwrap();
        let rmean = store.id_of("rmean").unwrap();
        let rvar = store.id_of("rvar").unwrap();
        store.zero_grads();
        let mut tape = Tape::new(false);
        let loss = {
            let xn = tape.param(&store, x);
            let y = tape
                .batch_norm(
                    &mut store,
                    xn,
                    gamma,
                    beta,
                    rmean,
                    rvar,
                    BnAxes::PerFeature,
                    0.1,
                    1e-5,
                )
                .unwrap();
            pin_loss(&mut tape, y, seed)
        };
        tape.backward(loss, &mut store).unwrap();
        let analytic = store.grad(x).data().to_vec();
        // FD over x only (eval mode has no batch-stat coupling).
        for k in 0..store.value(x).numel() {
            let orig = store.value(x).data()[k];
            let eval_at = |v: f64, store: &mut ParamStore<f64>| {
                store.value_mut(x).data_mut()[k] = v;
                let mut t = Tape::new(false);
                let xn = t.param(store, x);
                let y = t
                    .batch_norm(
                        store,
                        xn,
                        gamma,
                        beta,
                        rmean,
                        rvar,
                        BnAxes::PerFeature,
                        0.1,
                        1e-5,
                    )
                    .unwrap();
                let l = pin_loss(&mut t, y, seed);
                t.value(l).scalar_value()
            };
            let f_plus = eval_at(orig + H, &mut store);
            let f_minus = eval_at(orig - H, &mut store);
            store.value_mut(x).data_mut()[k] = orig;
            let fd = (f_plus - f_minus) / (2.0 * H);
            let a = analytic[k];
            assert!(
                (a - fd).abs() <= REL_TOL * a.abs().max(fd.abs()) + ABS_TOL,
                "bn eval: element {k}: {a} vs {fd}"
            );
        }
    }
}

#[test]
fn grad_lstm_step_stacked() {
    for seed in POINTS {
        let mut rng = Rng::seed_from_u64(seed);
        let hidden = 3;
        let input = 4;
        let mut store = ParamStore::new();
        param(&mut store, "x", &[2, input], &mut rng);
        param(&mut store, "h0", &[2, hidden], &mut rng);
        param(&mut store, "c0", &[2, hidden], &mut rng);
        param(&mut store, "h1", &[2, hidden], &mut rng);
        param(&mut store, "c1", &[2, hidden], &mut rng);
        param(&mut store, "w_ih0", &[4 * hidden, input], &mut rng);
        param(&mut store, "w_hh0", &[4 * hidden, hidden], &mut rng);
        param(&mut store, "b0", &[4 * hidden], &mut rng);
        param(&mut store, "w_ih1", &[4 * hidden, hidden], &mut rng);
        param(&mut store, "w_hh1", &[4 * hidden, hidden], &mut rng);
        param(&mut store, "b1", &[4 * hidden], &mut rng);
        let get = |n: &str, s: &ParamStore<f64>| s.id_of(n).unwrap();
        let layers = [
            LstmLayer {
                w_ih: get("w_ih0", &store),
                w_hh: get("w_hh0", &store),
                bias: get("b0", &store),
            },
            LstmLayer {
                w_ih: get("w_ih1", &store),
                w_hh: get("w_hh1", &store),
                bias: get("b1", &store),
            },
        ];
        let x = get("x", &store);
        let states = [
            (get("h0", &store), get("c0", &store)),
            (get("h1", &store), get("c1", &store)),
        ];
        check_gradients(
            &mut store,
            |tape, store| {
                let xn = tape.param(store, x);
                let st: Vec<_> = states
                    .iter()
                    .map(|&(h, c)| (tape.param(store, h), tape.param(store, c)))
                    .collect();
                let (next, top) = tape.lstm_step(store, xn, &st, &layers).unwrap();
                // Tie every output into the loss so all paths are exercised.
                let bottom_c = next[0].1;
                let l1 = pin_loss(tape, top, seed);
                let l2 = pin_loss(tape, bottom_c, seed ^ 1);
                tape.add(l1, l2).unwrap()
            },
            "lstm_step",
        );
    }
}

#[test]
fn grad_composed_mlp_loss() {
    // Two-layer MLP into a softmax cross-entropy, the shape of the policy
    // head, checked end to end.
    for seed in POINTS {
        let mut rng = Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        param(&mut store, "x", &[4, 6], &mut rng);
        param(&mut store, "w1", &[8, 6], &mut rng);
        param(&mut store, "b1", &[8], &mut rng);
        param(&mut store, "w2", &[5, 8], &mut rng);
        param(&mut store, "b2", &[5], &mut rng);
        let x = store.id_of("x").unwrap();
        let w1 = store.id_of("w1").unwrap();
        let b1 = store.id_of("b1").unwrap();
        let w2 = store.id_of("w2").unwrap();
        let b2 = store.id_of("b2").unwrap();
        check_gradients(
            &mut store,
            |tape, store| {
                let xn = tape.param(store, x);
                let h = tape.linear(store, xn, w1, Some(b1)).unwrap();
                let h = tape.relu(h);
                let logits = tape.linear(store, h, w2, Some(b2)).unwrap();
                tape.cross_entropy(logits, &[0, 4, 2, 2]).unwrap()
            },
            "mlp+cross_entropy",
        );
    }
}
