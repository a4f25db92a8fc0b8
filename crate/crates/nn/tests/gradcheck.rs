//! Central finite-difference checks for every op in the catalog, plus the
//! composed encoder and policy forward passes.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use babelsql_nn::ops;
use babelsql_nn::tape::{Tape, Var};
use babelsql_nn::tensor::Tensor;

const H: f64 = 1e-5;
const OP_TOL: f64 = 1e-4;
const COMPOSED_TOL: f64 = 1e-3;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Checks d(scalar build(inputs))/d(inputs) against central differences on
/// every coordinate of every input.
fn grad_check(
    name: &str,
    inputs: &[Tensor],
    tol: f64,
    build: impl Fn(&mut Tape, &[Var]) -> Var,
) {
    // analytic gradients
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = build(&mut tape, &vars);
    assert_eq!(tape.value(out).numel(), 1, "{name}: output must be scalar");
    let grads = tape.backward(out);

    let eval = |perturbed: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.leaf(t)).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).item()
    };

    for (ti, input) in inputs.iter().enumerate() {
        let analytic = grads
            .wrt(vars[ti])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.shape()));
        for ci in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[ti].data_mut()[ci] += H;
            let mut minus = inputs.to_vec();
            minus[ti].data_mut()[ci] -= H;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let an = analytic.data()[ci];
            assert!(
                rel_err(an, fd) < tol,
                "{name}: input {ti} coord {ci}: analytic {an} vs fd {fd}"
            );
        }
    }
}

fn randt(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

/// Projects a non-scalar op output to a scalar with a fixed random weighting
/// so gradients of every output coordinate are exercised.
fn project(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let shape = tape.value(x).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(Tensor::randn(&shape, 1.0, &mut rng));
    let prod = ops::mul(tape, x, w);
    ops::sum(tape, prod, None)
}

#[test]
fn grad_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = randt(&[3, 4], &mut rng);
    let b = randt(&[4, 5], &mut rng);
    grad_check("matmul", &[a, b], OP_TOL, |t, v| {
        let y = ops::matmul(t, v[0], v[1]);
        project(t, y, 10)
    });
    // vector × matrix
    let a1 = randt(&[4], &mut rng);
    let b1 = randt(&[4, 3], &mut rng);
    grad_check("matmul-vec", &[a1, b1], OP_TOL, |t, v| {
        let y = ops::matmul(t, v[0], v[1]);
        project(t, y, 11)
    });
}

#[test]
fn grad_add_sub_mul_broadcast() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (name, op) in [
        ("add", ops::add as fn(&mut Tape, Var, Var) -> Var),
        ("sub", ops::sub),
        ("mul", ops::mul),
    ] {
        let a = randt(&[3, 4], &mut rng);
        let b = randt(&[3, 4], &mut rng);
        grad_check(name, &[a, b], OP_TOL, move |t, v| {
            let y = op(t, v[0], v[1]);
            project(t, y, 20)
        });
        // suffix broadcast [3,4] ⊕ [4]
        let a = randt(&[3, 4], &mut rng);
        let b = randt(&[4], &mut rng);
        grad_check(name, &[a, b], OP_TOL, move |t, v| {
            let y = op(t, v[0], v[1]);
            project(t, y, 21)
        });
        // scalar broadcast
        let a = randt(&[3, 4], &mut rng);
        let b = Tensor::scalar(0.7);
        grad_check(name, &[a, b], OP_TOL, move |t, v| {
            let y = op(t, v[0], v[1]);
            project(t, y, 22)
        });
    }
}

#[test]
fn grad_relu() {
    // keep values away from the kink at 0
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut x = randt(&[4, 4], &mut rng);
    for v in x.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1;
        }
    }
    grad_check("relu", &[x], OP_TOL, |t, v| {
        let y = ops::relu(t, v[0]);
        project(t, y, 30)
    });
}

#[test]
fn grad_exp() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = randt(&[3, 3], &mut rng);
    grad_check("exp", &[x], OP_TOL, |t, v| {
        let y = ops::exp(t, v[0]);
        project(t, y, 40)
    });
}

#[test]
fn grad_softmax_and_log_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = randt(&[3, 6], &mut rng);
    grad_check("softmax", &[x.clone()], OP_TOL, |t, v| {
        let y = ops::softmax(t, v[0]);
        project(t, y, 50)
    });
    grad_check("log_softmax", &[x], OP_TOL, |t, v| {
        let y = ops::log_softmax(t, v[0]);
        project(t, y, 51)
    });
}

#[test]
fn softmax_grad_rows_sum_to_zero() {
    // analytic identity: gradients of any scalar of softmax outputs sum to 0
    // along each row of the input
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let x = randt(&[4, 7], &mut rng);
    let mut tape = Tape::new();
    let xv = tape.leaf(&x);
    let y = ops::softmax(&mut tape, xv);
    let s = project(&mut tape, y, 56);
    let grads = tape.backward(s);
    let g = grads.wrt(xv).unwrap();
    for r in 0..4 {
        let row_sum: f64 = g.data()[r * 7..(r + 1) * 7].iter().sum();
        assert!(row_sum.abs() < 1e-10, "row {r} sums to {row_sum}");
    }
}

#[test]
fn grad_layer_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = randt(&[3, 8], &mut rng);
    let gamma = randt(&[8], &mut rng);
    let beta = randt(&[8], &mut rng);
    grad_check("layer_norm", &[x, gamma, beta], OP_TOL, |t, v| {
        let y = ops::layer_norm(t, v[0], v[1], v[2], 1e-5);
        project(t, y, 60)
    });
}

#[test]
fn grad_embedding_lookup() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let table = randt(&[10, 5], &mut rng);
    let ids = vec![3usize, 7, 3, 0]; // repeated id exercises accumulation
    grad_check("embedding_lookup", &[table], OP_TOL, move |t, v| {
        let y = ops::embedding_lookup(t, v[0], &ids);
        project(t, y, 70)
    });
}

#[test]
fn grad_concat() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = randt(&[2, 3], &mut rng);
    let b = randt(&[4, 3], &mut rng);
    grad_check("concat-rows", &[a, b], OP_TOL, |t, v| {
        let y = ops::concat(t, &[v[0], v[1]], 0);
        project(t, y, 80)
    });
    let a = randt(&[3, 2], &mut rng);
    let b = randt(&[3, 4], &mut rng);
    grad_check("concat-cols", &[a, b], OP_TOL, |t, v| {
        let y = ops::concat(t, &[v[0], v[1]], 1);
        project(t, y, 81)
    });
    let a = randt(&[3], &mut rng);
    let b = randt(&[5], &mut rng);
    grad_check("concat-1d", &[a, b], OP_TOL, |t, v| {
        let y = ops::concat(t, &[v[0], v[1]], 0);
        project(t, y, 82)
    });
}

#[test]
fn grad_reductions() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for axis in [None, Some(0), Some(1)] {
        let x = randt(&[3, 4], &mut rng);
        grad_check("sum", &[x.clone()], OP_TOL, move |t, v| {
            let y = ops::sum(t, v[0], axis);
            project(t, y, 90)
        });
        grad_check("mean", &[x], OP_TOL, move |t, v| {
            let y = ops::mean(t, v[0], axis);
            project(t, y, 91)
        });
    }
}

#[test]
fn grad_dropout_fixed_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = randt(&[4, 4], &mut rng);
    // fixed seed makes the mask a constant linear map, so FD applies
    grad_check("dropout", &[x], OP_TOL, |t, v| {
        let y = ops::dropout(t, v[0], 0.4, true, 1234);
        project(t, y, 100)
    });
}

#[test]
fn dropout_eval_is_identity_and_train_is_seed_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = randt(&[5, 5], &mut rng);
    let mut tape = Tape::new();
    let xv = tape.leaf(&x);
    let y = ops::dropout(&mut tape, xv, 0.5, false, 1);
    assert_eq!(tape.value(y).data(), x.data());

    let run = |seed: u64| -> Vec<f64> {
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let y = ops::dropout(&mut tape, xv, 0.5, true, seed);
        tape.value(y).data().to_vec()
    };
    assert_eq!(run(7), run(7));
    assert_ne!(run(7), run(8));
}

#[test]
fn grad_l2_normalize_and_cosine() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = randt(&[3, 6], &mut rng);
    grad_check("l2_normalize", &[x], OP_TOL, |t, v| {
        let y = ops::l2_normalize(t, v[0]);
        project(t, y, 110)
    });
    let a = randt(&[8], &mut rng);
    let b = randt(&[8], &mut rng);
    grad_check("cosine_similarity", &[a, b], OP_TOL, |t, v| {
        ops::cosine_similarity(t, v[0], v[1])
    });
}

#[test]
fn grad_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let logits = randt(&[4, 9], &mut rng);
    let targets = vec![2i64, -1, 8, 0]; // one ignored row
    grad_check("cross_entropy", &[logits], OP_TOL, move |t, v| {
        ops::cross_entropy(t, v[0], &targets)
    });
}

#[test]
fn grad_transpose_slice_take() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = randt(&[3, 5], &mut rng);
    grad_check("transpose", &[x.clone()], OP_TOL, |t, v| {
        let y = ops::transpose(t, v[0]);
        project(t, y, 120)
    });
    grad_check("slice_rows", &[x.clone()], OP_TOL, |t, v| {
        let y = ops::slice_rows(t, v[0], 1, 2);
        project(t, y, 121)
    });
    let idx = vec![(0usize, 1usize), (2, 4), (0, 1)]; // repeated entry
    grad_check("take_entries", &[x], OP_TOL, move |t, v| {
        let y = ops::take_entries(t, v[0], &idx);
        project(t, y, 122)
    });
}

// --- composed models ---------------------------------------------------------

#[test]
fn grad_composed_encoder() {
    use babelsql_nn::encoder::{Encoder, EncoderConfig};
    let cfg = EncoderConfig { buckets: 64, d_enc: 12, d_proj: 16, dropout: 0.0, ..Default::default() };
    let enc = Encoder::new(cfg, 3);
    let ids_a = enc.featurize("show all actors").unwrap();
    let ids_p = enc.featurize("hiển thị diễn viên").unwrap();
    let ids_n = enc.featurize("count the rows").unwrap();

    // a full triplet-loss forward as one scalar function of the parameters;
    // margin 10 keeps the hinge active so the max() kink is far away.
    // parameters are redrawn at O(1) scale: the init-scale point leaves the
    // pre-normalization vector tiny, and 1/||z|| curvature there makes
    // central differences ill-conditioned
    let mut prng = ChaCha8Rng::seed_from_u64(77);
    let tensors: Vec<Tensor> = enc
        .params
        .params()
        .iter()
        .map(|p| Tensor::randn(p.value.shape(), 0.5, &mut prng))
        .collect();
    let names: Vec<String> = enc.params.params().iter().map(|p| p.name.clone()).collect();
    let build = move |t: &mut Tape, v: &[Var]| -> Var {
        let table = v[names.iter().position(|n| n == "ngram.table").unwrap()];
        let w1 = v[names.iter().position(|n| n == "proj1.w").unwrap()];
        let b1 = v[names.iter().position(|n| n == "proj1.b").unwrap()];
        let w2 = v[names.iter().position(|n| n == "proj2.w").unwrap()];
        let b2 = v[names.iter().position(|n| n == "proj2.b").unwrap()];
        let embed = |t: &mut Tape, ids: &[usize]| -> Var {
            let rows = ops::embedding_lookup(t, table, ids);
            let pooled = ops::mean(t, rows, Some(0));
            let h = ops::matmul(t, pooled, w1);
            let h = ops::add(t, h, b1);
            let h = ops::relu(t, h);
            let z = ops::matmul(t, h, w2);
            let z = ops::add(t, z, b2);
            ops::l2_normalize(t, z)
        };
        let a = embed(t, &ids_a);
        let p = embed(t, &ids_p);
        let n = embed(t, &ids_n);
        let cos_ap = ops::cosine_similarity(t, a, p);
        let cos_an = ops::cosine_similarity(t, a, n);
        let gap = ops::sub(t, cos_an, cos_ap);
        let margin = t.scalar(10.0);
        let shifted = ops::add(t, gap, margin);
        ops::relu(t, shifted)
    };
    // FD over every parameter coordinate of the small encoder is feasible
    grad_check("composed-encoder", &tensors, COMPOSED_TOL, build);
}

#[test]
fn grad_composed_policy() {
    use babelsql_nn::policy::{Policy, PolicyConfig, TokenizerConfig, BOS, EOS};
    let p = Policy::new(
        PolicyConfig {
            n_layers: 2,
            d_model: 8,
            n_heads: 2,
            d_ff: 12,
            max_ctx: 16,
            tokenizer: TokenizerConfig { max_prompt_len: 8, max_gen_len: 8 },
        },
        17,
    );
    let prompt: Vec<u16> = vec![b'q' as u16, BOS];
    let completion: Vec<u16> = vec![b's' as u16, b'q' as u16, b'l' as u16, EOS];
    let mut tokens = prompt.clone();
    tokens.extend_from_slice(&completion);
    let targets: Vec<i64> = completion.iter().map(|&t| t as i64).collect();

    let tensors: Vec<Tensor> = p.params.params().iter().map(|pp| pp.value.clone()).collect();
    // spot-check a subset of coordinates per parameter to keep runtime low,
    // by zero-masking FD to sampled coordinates
    let analytic: Vec<Tensor> = {
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape);
        let logits = p.forward_taped(&mut tape, &vars, &tokens);
        let rows = ops::slice_rows(&mut tape, logits, prompt.len() - 1, completion.len());
        let loss = ops::cross_entropy(&mut tape, rows, &targets);
        let grads = tape.backward(loss);
        vars.iter()
            .zip(tensors.iter())
            .map(|(&v, t)| grads.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    };

    let eval = |perturbed: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.leaf(t)).collect();
        let logits = p.forward_taped(&mut tape, &vars, &tokens);
        let rows = ops::slice_rows(&mut tape, logits, prompt.len() - 1, completion.len());
        let loss = ops::cross_entropy(&mut tape, rows, &targets);
        tape.value(loss).item()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut checked = 0usize;
    for ti in 0..tensors.len() {
        let n = tensors[ti].numel();
        let coords: Vec<usize> = (0..3.min(n)).map(|_| rng.gen_range(0..n)).collect();
        for ci in coords {
            let mut plus = tensors.clone();
            plus[ti].data_mut()[ci] += H;
            let mut minus = tensors.clone();
            minus[ti].data_mut()[ci] -= H;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let an = analytic[ti].data()[ci];
            assert!(
                rel_err(an, fd) < COMPOSED_TOL,
                "policy param {ti} coord {ci}: analytic {an} vs fd {fd}"
            );
            checked += 1;
        }
    }
    assert!(checked >= 60, "checked only {checked} coordinates");
}
