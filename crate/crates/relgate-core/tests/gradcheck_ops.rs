//! Analytic gradients of every differentiable op against central finite
//! differences over randomized shapes and seeds.
//!
//! Each scenario is a scalar loss built from a flat parameter vector; the
//! builder splits the vector into shaped leaves, applies the op under test,
//! and reads the loss out through a fixed random weighting so off-diagonal
//! gradient paths are exercised too.

mod common;

use common::{central_diff, max_rel_err, FD_STEP, GRAD_TOL};
use relgate_core::rng::SeededRng;
use relgate_core::tape::{Tape, TensorId};
use relgate_core::tensor::Tensor;

/// One forward construction: consumes the flat parameter vector, returns
/// the scalar loss node and the leaves the vector was split into.
type Builder<'a> = dyn Fn(&[f64], &mut Tape) -> (TensorId, Vec<TensorId>) + 'a;

fn leaf(tape: &mut Tape, shape: Vec<usize>, values: &[f64]) -> TensorId {
    tape.leaf(Tensor::new(shape, values.to_vec()).unwrap().with_grad())
}

fn readout(tape: &mut Tape, x: TensorId, rng: &mut SeededRng) -> TensorId {
    let weights: Vec<f64> = (0..tape.value(x).len()).map(|_| rng.normal(0.0, 1.0)).collect();
    let w = tape.constant(tape.shape(x).to_vec(), weights).unwrap();
    let prod = tape.mul(x, w).unwrap();
    tape.sum(prod)
}

fn rand_vec(rng: &mut SeededRng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.normal(0.0, 1.0)).collect()
}

/// Nudge values away from relu's kink so central differences stay clean.
fn kink_free(values: &mut [f64]) {
    for v in values.iter_mut() {
        if v.abs() < 1e-3 {
            *v += if *v >= 0.0 { 2e-3 } else { -2e-3 };
        }
    }
}

fn check(build: &Builder, at: &[f64], label: &str) {
    let f = |params: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let (loss, _) = build(params, &mut tape);
        tape.value(loss)[0]
    };
    let numeric = central_diff(&f, at, FD_STEP);

    let mut tape = Tape::new();
    let (loss, leaves) = build(at, &mut tape);
    tape.backward(loss).unwrap();
    let mut analytic = Vec::with_capacity(at.len());
    for id in leaves {
        analytic.extend_from_slice(tape.grad(id).expect("leaf gradient"));
    }
    assert_eq!(analytic.len(), at.len(), "{label}: leaves must cover the vector");

    let err = max_rel_err(&analytic, &numeric);
    assert!(err < GRAD_TOL, "{label}: max relative error {err:.3e}");
}

#[test]
fn matmul_gradients_random_shapes() {
    let mut rng = SeededRng::new(101);
    for case in 0..12 {
        let m = 1 + rng.below(4);
        let k = 1 + rng.below(4);
        let n = 1 + rng.below(4);
        let mut seed_rng = SeededRng::new(500 + case);
        let at = rand_vec(&mut seed_rng, m * k + k * n);
        let build = move |params: &[f64], tape: &mut Tape| {
            let a = leaf(tape, vec![m, k], &params[..m * k]);
            let b = leaf(tape, vec![k, n], &params[m * k..]);
            let c = tape.matmul(a, b).unwrap();
            let mut w_rng = SeededRng::new(900 + case);
            (readout(tape, c, &mut w_rng), vec![a, b])
        };
        check(&build, &at, &format!("matmul {m}x{k}x{n}"));
    }
}

#[test]
fn matmul_forward_backward_match_triple_loop_oracle() {
    // random 3x4 · 4x2 against a straightforward triple-loop reference
    let mut rng = SeededRng::new(7);
    let (m, k, n) = (3, 4, 2);
    let a_data = rand_vec(&mut rng, m * k);
    let b_data = rand_vec(&mut rng, k * n);
    let up = rand_vec(&mut rng, m * n); // upstream gradient

    // oracle forward
    let mut c_ref = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                c_ref[i * n + j] += a_data[i * k + p] * b_data[p * n + j];
            }
        }
    }
    // oracle backward: dA = up · Bᵀ, dB = Aᵀ · up
    let mut da_ref = vec![0.0; m * k];
    let mut db_ref = vec![0.0; k * n];
    for i in 0..m {
        for p in 0..k {
            for j in 0..n {
                da_ref[i * k + p] += up[i * n + j] * b_data[p * n + j];
                db_ref[p * n + j] += a_data[i * k + p] * up[i * n + j];
            }
        }
    }

    let mut tape = Tape::new();
    let a = leaf(&mut tape, vec![m, k], &a_data);
    let b = leaf(&mut tape, vec![k, n], &b_data);
    let c = tape.matmul(a, b).unwrap();
    for (got, want) in tape.value(c).iter().zip(&c_ref) {
        assert!((got - want).abs() < 1e-12);
    }
    // loss = sum(C ⊙ up) makes dC = up exactly
    let upc = tape.constant(vec![m, n], up.clone()).unwrap();
    let prod = tape.mul(c, upc).unwrap();
    let loss = tape.sum(prod);
    tape.backward(loss).unwrap();
    for (got, want) in tape.grad(a).unwrap().iter().zip(&da_ref) {
        assert!((got - want).abs() < 1e-12);
    }
    for (got, want) in tape.grad(b).unwrap().iter().zip(&db_ref) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn elementwise_gradients_random_seeds() {
    for case in 0..10 {
        let mut seed_rng = SeededRng::new(2_000 + case);
        let len = 3 + seed_rng.below(6);

        // binary add and mul on two operands
        let at2 = rand_vec(&mut seed_rng, 2 * len);
        let build_add = move |params: &[f64], tape: &mut Tape| {
            let a = leaf(tape, vec![len], &params[..len]);
            let b = leaf(tape, vec![len], &params[len..]);
            let c = tape.add(a, b).unwrap();
            let mut w_rng = SeededRng::new(3_000 + case);
            (readout(tape, c, &mut w_rng), vec![a, b])
        };
        check(&build_add, &at2, "add");
        let build_mul = move |params: &[f64], tape: &mut Tape| {
            let a = leaf(tape, vec![len], &params[..len]);
            let b = leaf(tape, vec![len], &params[len..]);
            let c = tape.mul(a, b).unwrap();
            let mut w_rng = SeededRng::new(4_000 + case);
            (readout(tape, c, &mut w_rng), vec![a, b])
        };
        check(&build_mul, &at2, "mul");

        // unary relu / sigmoid / gelu
        let mut at1 = rand_vec(&mut seed_rng, len);
        kink_free(&mut at1);
        for (name, op) in [
            ("relu", 0usize),
            ("sigmoid", 1),
            ("gelu", 2),
        ] {
            let build = move |params: &[f64], tape: &mut Tape| {
                let x = leaf(tape, vec![len], params);
                let y = match op {
                    0 => tape.relu(x),
                    1 => tape.sigmoid(x),
                    _ => tape.gelu(x),
                };
                let mut w_rng = SeededRng::new(5_000 + case);
                (readout(tape, y, &mut w_rng), vec![x])
            };
            check(&build, &at1, name);
        }
    }
}

#[test]
fn softmax_gradients_both_axes() {
    for case in 0..8 {
        let mut seed_rng = SeededRng::new(6_000 + case);
        let rows = 1 + seed_rng.below(4);
        let cols = 2 + seed_rng.below(4);
        let at = rand_vec(&mut seed_rng, rows * cols);
        for axis in 0..2usize {
            let build = move |params: &[f64], tape: &mut Tape| {
                let x = leaf(tape, vec![rows, cols], params);
                let y = tape.softmax(x, axis).unwrap();
                let mut w_rng = SeededRng::new(7_000 + case);
                (readout(tape, y, &mut w_rng), vec![x])
            };
            check(&build, &at, &format!("softmax axis {axis}"));
        }
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = SeededRng::new(42);
    for _ in 0..20 {
        let mut tape = Tape::new();
        let vals = rand_vec(&mut rng, 5);
        let x = tape.constant(vec![5], vals).unwrap();
        let y = tape.softmax(x, 0).unwrap();
        let sum: f64 = tape.value(y).iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(tape.value(y).iter().all(|&v| v > 0.0));
    }
}

#[test]
fn layer_norm_gradients() {
    for case in 0..10 {
        let mut seed_rng = SeededRng::new(8_000 + case);
        let rows = 1 + seed_rng.below(3);
        let n = 2 + seed_rng.below(5);
        let at = rand_vec(&mut seed_rng, rows * n + 2 * n);
        let build = move |params: &[f64], tape: &mut Tape| {
            let x = leaf(tape, vec![rows, n], &params[..rows * n]);
            let gain = leaf(tape, vec![n], &params[rows * n..rows * n + n]);
            let bias = leaf(tape, vec![n], &params[rows * n + n..]);
            let y = tape.layer_norm(x, gain, bias, 1e-5).unwrap();
            let mut w_rng = SeededRng::new(9_000 + case);
            (readout(tape, y, &mut w_rng), vec![x, gain, bias])
        };
        check(&build, &at, "layer_norm");
    }
}

#[test]
fn concat_slice_transpose_gradients() {
    for case in 0..10 {
        let mut seed_rng = SeededRng::new(10_000 + case);
        let rows = 1 + seed_rng.below(3);
        let ca = 1 + seed_rng.below(3);
        let cb = 1 + seed_rng.below(3);
        let at = rand_vec(&mut seed_rng, rows * (ca + cb));
        let build = move |params: &[f64], tape: &mut Tape| {
            let a = leaf(tape, vec![rows, ca], &params[..rows * ca]);
            let b = leaf(tape, vec![rows, cb], &params[rows * ca..]);
            let joined = tape.concat(a, b, 1).unwrap();
            let flipped = tape.transpose(joined).unwrap();
            let window = tape.slice(flipped, 0, 0, ca).unwrap();
            let mut w_rng = SeededRng::new(11_000 + case);
            (readout(tape, window, &mut w_rng), vec![a, b])
        };
        check(&build, &at, "concat/transpose/slice");
    }
}

#[test]
fn embedding_and_bias_gradients() {
    for case in 0..8 {
        let mut seed_rng = SeededRng::new(12_000 + case);
        let vocab = 4 + seed_rng.below(4);
        let d = 2 + seed_rng.below(3);
        let ids: Vec<usize> = (0..5).map(|_| seed_rng.below(vocab)).collect();
        let at = rand_vec(&mut seed_rng, vocab * d + d);
        let ids_clone = ids.clone();
        let build = move |params: &[f64], tape: &mut Tape| {
            let table = leaf(tape, vec![vocab, d], &params[..vocab * d]);
            let bias = leaf(tape, vec![d], &params[vocab * d..]);
            let rows = tape.embedding(table, &ids_clone).unwrap();
            let biased = tape.add_bias(rows, bias).unwrap();
            let mut w_rng = SeededRng::new(13_000 + case);
            (readout(tape, biased, &mut w_rng), vec![table, bias])
        };
        check(&build, &at, "embedding/add_bias");
    }
}

#[test]
fn loss_gradients() {
    for case in 0..10 {
        let mut seed_rng = SeededRng::new(14_000 + case);
        let r = 2 + seed_rng.below(5);
        let at = rand_vec(&mut seed_rng, r);
        let targets: Vec<f64> = (0..r).map(|_| seed_rng.below(2) as f64).collect();
        let t = targets.clone();
        let build_bce = move |params: &[f64], tape: &mut Tape| {
            let z = leaf(tape, vec![r], params);
            (tape.bce_mean(z, &t).unwrap(), vec![z])
        };
        check(&build_bce, &at, "bce_mean");

        let class = seed_rng.below(r);
        let build_xent = move |params: &[f64], tape: &mut Tape| {
            let z = leaf(tape, vec![r], params);
            (tape.softmax_xent(z, class).unwrap(), vec![z])
        };
        check(&build_xent, &at, "softmax_xent");
    }
}

#[test]
fn dropout_gradients_with_frozen_mask() {
    // the mask depends only on the rng stream, so rebuilding with the same
    // seed gives the identical mask and the finite difference is valid
    for case in 0..6 {
        let mut seed_rng = SeededRng::new(15_000 + case);
        let len = 4 + seed_rng.below(5);
        let at = rand_vec(&mut seed_rng, len);
        let build = move |params: &[f64], tape: &mut Tape| {
            let x = leaf(tape, vec![len], params);
            let mut mask_rng = SeededRng::new(16_000 + case);
            let y = tape.dropout(x, 0.3, &mut mask_rng).unwrap();
            let mut w_rng = SeededRng::new(17_000 + case);
            (readout(tape, y, &mut w_rng), vec![x])
        };
        check(&build, &at, "dropout");
    }
}

#[test]
fn two_layer_mlp_gradients() {
    // sizes: input 3, hidden 5, output 2 with sigmoid + gelu nonlinearity
    let (din, dh, dout) = (3usize, 5usize, 2usize);
    let n_params = din * dh + dh + dh * dout + dout;
    for case in 0..5 {
        let mut seed_rng = SeededRng::new(18_000 + case);
        let at = rand_vec(&mut seed_rng, n_params);
        let input = rand_vec(&mut seed_rng, 2 * din);
        let inp = input.clone();
        let build = move |params: &[f64], tape: &mut Tape| {
            let mut off = 0;
            let mut next = |shape: Vec<usize>, tape: &mut Tape, params: &[f64]| {
                let len: usize = shape.iter().product();
                let id = leaf(tape, shape, &params[off..off + len]);
                off += len;
                id
            };
            let w1 = next(vec![din, dh], tape, params);
            let b1 = next(vec![dh], tape, params);
            let w2 = next(vec![dh, dout], tape, params);
            let b2 = next(vec![dout], tape, params);
            let x = tape.constant(vec![2, din], inp.clone()).unwrap();
            let h = tape.matmul(x, w1).unwrap();
            let h = tape.add_bias(h, b1).unwrap();
            let h = tape.gelu(h);
            let y = tape.matmul(h, w2).unwrap();
            let y = tape.add_bias(y, b2).unwrap();
            let y = tape.sigmoid(y);
            let mut w_rng = SeededRng::new(19_000 + case);
            (readout(tape, y, &mut w_rng), vec![w1, b1, w2, b2])
        };
        check(&build, &at, "two-layer MLP");
    }
}
