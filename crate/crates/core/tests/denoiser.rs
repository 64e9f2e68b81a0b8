use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use remos_autodiff::gradcheck::{strided_entries, GradCheck};
use remos_autodiff::{Graph, ParamStore, Tensor, Var};
use remos_core::denoiser::{
    cost_xa, h_xa, stack_tokens, timestep_embedding, DenoiserConfig, DenoiserNet, Mode, Stage, TokenMasks,
};
use remos_core::motion::HandInteractionMask;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn random_motion(rng: &mut ChaCha8Rng, n: usize, j: usize) -> Array3<f64> {
    Array3::from_shape_simple_fn((n, j, 3), || rng.random_range(-1.0..1.0))
}

/// Plain-loop multi-head attention on `[T, d]` row-major inputs for one
/// batch entry. Returns (output `[Tq, d]`, weights `[heads][Tq][Tk]`).
fn brute_attention(q: &[f64], k: &[f64], v: &[f64], tq: usize, tk: usize, d: usize, heads: usize) -> (Vec<f64>, Vec<Vec<Vec<f64>>>) {
    let dk = d / heads;
    let mut out = vec![0.0; tq * d];
    let mut all = Vec::new();
    for h in 0..heads {
        let mut w = vec![vec![0.0; tk]; tq];
        for i in 0..tq {
            let logits: Vec<f64> = (0..tk)
                .map(|j| (0..dk).map(|c| q[i * d + h * dk + c] * k[j * d + h * dk + c]).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            for j in 0..tk {
                w[i][j] = (logits[j] - m).exp() / z;
            }
            for c in 0..dk {
                out[i * d + h * dk + c] = (0..tk).map(|j| w[i][j] * v[j * d + h * dk + c]).sum();
            }
        }
        all.push(w);
    }
    (out, all)
}

#[test]
fn timestep_embedding_properties() {
    let e0 = timestep_embedding(0, 500, 32).unwrap();
    let e1 = timestep_embedding(1, 500, 32).unwrap();
    let dist: f64 = e0.iter().zip(&e1).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(dist > 0.0);
    assert_eq!(timestep_embedding(7, 500, 32).unwrap(), timestep_embedding(7, 500, 32).unwrap());
    assert!(timestep_embedding(501, 500, 32).is_err());
}

#[test]
fn timestep_embeddings_pairwise_distinct() {
    let all: Vec<Vec<f64>> = (0..=500).map(|t| timestep_embedding(t, 500, 32).unwrap()).collect();
    let mut min = f64::INFINITY;
    for a in 0..all.len() {
        for b in a + 1..all.len() {
            let d: f64 = all[a].iter().zip(&all[b]).map(|(x, y)| (x - y).powi(2)).sum();
            min = min.min(d);
        }
    }
    assert!(min > 1e-6, "closest pair at squared distance {min}");
}

#[test]
fn four_token_attention_matches_hand_values() {
    // N = 2, J = 2, d = 2, one head. Only query 0 is hand-evaluated: with
    // q0 = (1, 0) the logits are k_j.x / sqrt(2).
    let q = vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, -1.0, 0.5];
    let k = vec![0.0, 0.0, 1.0, 0.0, 2.0, 1.0, -1.0, 3.0];
    let v = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
    let mut g = Graph::new();
    let t = |d: &Vec<f64>| Tensor::new(&[1, 4, 2], d.clone()).unwrap();
    let (qv, kv, vv) = (g.constant(t(&q)), g.constant(t(&k)), g.constant(t(&v)));
    let att = cost_xa(&mut g, qv, kv, vv, 1).unwrap();
    let s = 2f64.sqrt();
    let e = [0.0, 1.0 / s, 2.0 / s, -1.0 / s].map(f64::exp);
    let z: f64 = e.iter().sum();
    let w: Vec<f64> = e.iter().map(|x| x / z).collect();
    let out0 = [
        w[0] * 1.0 + w[1] * 3.0 + w[2] * 5.0 + w[3] * 7.0,
        w[0] * 2.0 + w[1] * 4.0 + w[2] * 6.0 + w[3] * 8.0,
    ];
    let out = g.value(att.output).data();
    assert!((out[0] - out0[0]).abs() < 1e-12 && (out[1] - out0[1]).abs() < 1e-12);
    let weights = g.value(att.weights).data();
    for j in 0..4 {
        assert!((weights[j] - w[j]).abs() < 1e-12);
    }
    let (bo, _) = brute_attention(&q, &k, &v, 4, 4, 2, 1);
    for (a, b) in out.iter().zip(&bo) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn multi_head_attention_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (tq, d, heads) = (6, 8, 2);
    let q = random_tensor(&mut rng, &[1, tq, d]);
    let k = random_tensor(&mut rng, &[1, tq, d]);
    let v = random_tensor(&mut rng, &[1, tq, d]);
    let mut g = Graph::new();
    let (qv, kv, vv) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
    let att = cost_xa(&mut g, qv, kv, vv, heads).unwrap();
    let (bo, bw) = brute_attention(q.data(), k.data(), v.data(), tq, tq, d, heads);
    for (a, b) in g.value(att.output).data().iter().zip(&bo) {
        assert!((a - b).abs() < 1e-12);
    }
    let w = g.value(att.weights);
    for h in 0..heads {
        for i in 0..tq {
            let row: f64 = (0..tq).map(|j| w.get(&[0, h, i, j])).sum();
            assert!((row - 1.0).abs() < 1e-12);
            for j in 0..tq {
                assert!((w.get(&[0, h, i, j]) - bw[h][i][j]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn zero_keys_give_uniform_rows_and_column_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (t, d) = (4, 4);
    let q = random_tensor(&mut rng, &[1, t, d]);
    let v = random_tensor(&mut rng, &[1, t, d]);
    let mut g = Graph::new();
    let (qv, kv, vv) = (g.constant(q), g.constant(Tensor::zeros(&[1, t, d])), g.constant(v.clone()));
    let att = cost_xa(&mut g, qv, kv, vv, 2).unwrap();
    assert!(g.value(att.weights).data().iter().all(|&w| w == 0.25));
    let out = g.value(att.output);
    for c in 0..d {
        let mean: f64 = (0..t).map(|j| v.get(&[0, j, c])).sum::<f64>() / t as f64;
        for i in 0..t {
            assert!((out.get(&[0, i, c]) - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn query_permutation_permutes_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (t, d) = (5, 4);
    let q = random_tensor(&mut rng, &[1, t, d]);
    let k = random_tensor(&mut rng, &[1, t, d]);
    let v = random_tensor(&mut rng, &[1, t, d]);
    let perm = [3, 0, 4, 1, 2];
    let qp = Tensor::from_fn(&[1, t, d], |i| q.get(&[0, perm[i / d], i % d]));
    let run = |q: Tensor| {
        let mut g = Graph::new();
        let (qv, kv, vv) = (g.constant(q), g.constant(k.clone()), g.constant(v.clone()));
        let att = cost_xa(&mut g, qv, kv, vv, 2).unwrap();
        g.value(att.output).clone()
    };
    let (base, permuted) = (run(q), run(qp));
    for i in 0..t {
        for c in 0..d {
            assert_eq!(permuted.get(&[0, i, c]), base.get(&[0, perm[i], c]));
        }
    }
}

#[test]
fn attention_shape_errors() {
    let mut g = Graph::new();
    let q = g.constant(Tensor::zeros(&[1, 4, 4]));
    let k = g.constant(Tensor::zeros(&[1, 3, 4]));
    let v = g.constant(Tensor::zeros(&[1, 4, 4]));
    assert!(cost_xa(&mut g, q, k, v, 2).is_err());
    let k4 = g.constant(Tensor::zeros(&[1, 4, 4]));
    assert!(cost_xa(&mut g, q, k4, v, 3).is_err());
    assert!(h_xa(&mut g, q, k4, v, &[1.0; 3], &[1.0; 4], 2).is_err());
}

#[test]
fn h_xa_masking() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (t, d) = (6, 4);
    let q = random_tensor(&mut rng, &[1, t, d]);
    let k = random_tensor(&mut rng, &[1, t, d]);
    let v = random_tensor(&mut rng, &[1, t, d]);
    let mut g = Graph::new();
    let (qv, kv, vv) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));

    let zero_actor = h_xa(&mut g, qv, kv, vv, &[1.0; 6], &[0.0; 6], 2).unwrap();
    let u = 1.0 / t as f64;
    assert!(g.value(zero_actor.weights).data().iter().all(|&w| w == u));

    let ones = h_xa(&mut g, qv, kv, vv, &[1.0; 6], &[1.0; 6], 2).unwrap();
    let plain = cost_xa(&mut g, qv, kv, vv, 2).unwrap();
    assert_eq!(g.value(ones.output).data(), g.value(plain.output).data());
    assert_eq!(g.value(ones.weights).data(), g.value(plain.weights).data());

    // Two frames, three hand joints; the hand is active in frame 1 only
    // for the reactor and frame 0 only for the actor.
    let mr = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
    let ma = [1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
    let att = h_xa(&mut g, qv, kv, vv, &mr, &ma, 2).unwrap();
    let mq: Vec<f64> = q.data().iter().enumerate().map(|(i, x)| x * mr[i / d]).collect();
    let mk: Vec<f64> = k.data().iter().enumerate().map(|(i, x)| x * ma[i / d]).collect();
    let (bo, _) = brute_attention(&mq, &mk, v.data(), t, t, d, 2);
    for (a, b) in g.value(att.output).data().iter().zip(&bo) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn tiny(stage: Stage) -> DenoiserConfig {
    DenoiserConfig {
        latent_dim: 8,
        layers: 1,
        heads: 2,
        steps: 10,
        ffn_mult: 2,
        ..DenoiserConfig::desk(stage, 3, 2)
    }
}

#[test]
fn config_validation() {
    assert!(DenoiserConfig::full_scale(Stage::Body, 11, 20).validate().is_ok());
    let bad = DenoiserConfig {
        heads: 3,
        ..DenoiserConfig::desk(Stage::Body, 11, 20)
    };
    assert!(bad.validate().is_err());
    assert!(DenoiserConfig {
        layers: 0,
        ..DenoiserConfig::desk(Stage::Body, 11, 20)
    }
    .validate()
    .is_err());
}

#[test]
fn desk_body_attention_is_44_by_44() {
    let net = DenoiserNet::new(DenoiserConfig::desk(Stage::Body, 11, 4), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_motion(&mut rng, 4, 11);
    let y = random_motion(&mut rng, 4, 11);
    let mut g = Graph::new();
    let xv = g.constant(stack_tokens(&[x.view()], 4, 11).unwrap());
    let yv = g.constant(stack_tokens(&[y.view()], 4, 11).unwrap());
    let f = net.forward(&mut g, xv, &[3], yv, None, Mode::Eval).unwrap();
    for w in &f.cross_weights {
        assert_eq!(g.shape(*w), &[1, 2, 44, 44]);
        for row in g.value(*w).data().chunks(44) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn body_denoise_shape_and_determinism() {
    let cfg = DenoiserConfig::desk(Stage::Body, 11, 20);
    let net = DenoiserNet::new(cfg.clone(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random_motion(&mut rng, 20, 11);
    let y = random_motion(&mut rng, 20, 11);
    let a = net.body_denoise(x.view(), 50, y.view()).unwrap();
    let b = net.body_denoise(x.view(), 50, y.view()).unwrap();
    assert_eq!(a.dim(), (20, 11, 3));
    assert_eq!(a, b);
    let again = DenoiserNet::new(cfg, 3).unwrap();
    assert_eq!(again.body_denoise(x.view(), 50, y.view()).unwrap(), a);
    assert!(net.body_denoise(x.view(), 101, y.view()).is_err());
    let short = random_motion(&mut rng, 19, 11);
    assert!(net.body_denoise(short.view(), 5, y.view()).is_err());
}

#[test]
fn stage_checks() {
    let body = DenoiserNet::new(DenoiserConfig::desk(Stage::Body, 4, 3), 0).unwrap();
    let hands = DenoiserNet::new(DenoiserConfig::desk(Stage::Hands, 4, 3), 0).unwrap();
    let x = Array3::zeros((3, 4, 3));
    let m = HandInteractionMask::constant(3, 4, true);
    assert!(body.hand_denoise(x.view(), 1, x.view(), &m).is_err());
    assert!(hands.body_denoise(x.view(), 1, x.view()).is_err());
    let mut g = Graph::new();
    let xv = g.constant(stack_tokens(&[x.view()], 3, 4).unwrap());
    assert!(hands.forward(&mut g, xv, &[1], xv, None, Mode::Eval).is_err());
    let tm = TokenMasks::from_masks(&[&m]);
    assert!(body.forward(&mut g, xv, &[1], xv, Some(&tm), Mode::Eval).is_err());
}

#[test]
fn hand_masks_are_live() {
    let (n, jh) = (4, 22);
    let net = DenoiserNet::new(DenoiserConfig::desk(Stage::Hands, jh, n), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random_motion(&mut rng, n, jh);
    let y = random_motion(&mut rng, n, jh);
    let on = net.hand_denoise(x.view(), 7, y.view(), &HandInteractionMask::constant(n, jh, true)).unwrap();
    let off = net.hand_denoise(x.view(), 7, y.view(), &HandInteractionMask::constant(n, jh, false)).unwrap();
    assert_eq!(on.dim(), (n, jh, 3));
    let diff = (&on - &off).mapv(f64::abs).sum();
    assert!(diff > 1e-6);
}

fn gradient_check(stage: Stage) {
    let cfg = tiny(stage);
    let net = DenoiserNet::new(cfg.clone(), 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (n, j) = (cfg.window, cfg.joints);
    let xs = [random_motion(&mut rng, n, j), random_motion(&mut rng, n, j)];
    let ys = [random_motion(&mut rng, n, j), random_motion(&mut rng, n, j)];
    let x = stack_tokens(&[xs[0].view(), xs[1].view()], n, j).unwrap();
    let y = stack_tokens(&[ys[0].view(), ys[1].view()], n, j).unwrap();
    let mut m0 = HandInteractionMask::constant(n, j, true);
    m0.actor[[0, 1]] = false;
    let m1 = HandInteractionMask::constant(n, j, true);
    let masks = TokenMasks::from_masks(&[&m0, &m1]);
    let bn = net.bn_buffers().clone();
    let mut check = GradCheck::new(|g: &mut Graph, store: &ParamStore| {
        let net = DenoiserNet::from_parts(cfg.clone(), store.clone(), bn.clone()).unwrap();
        let xv = g.constant(x.clone());
        let yv = g.constant(y.clone());
        let m = (stage == Stage::Hands).then_some(&masks);
        let f = net.forward(g, xv, &[2, 9], yv, m, Mode::Train).unwrap();
        let sq = g.square(f.x0)?;
        Ok::<Var, _>(g.sum(sq))
    });
    // Key biases have exactly zero gradient (softmax shift invariance);
    // the floor keeps central-difference round-off on them from counting
    // as relative error.
    check.floor = 1e-4;
    let mut store = net.params().clone();
    let picks = strided_entries(&store, 4);
    let report = check.entries(&mut store, &picks).unwrap();
    assert!(report.max_rel_error <= 1e-4, "{report:?}");
}

#[test]
fn body_gradients_match_finite_differences() {
    gradient_check(Stage::Body);
}

#[test]
fn hand_gradients_match_finite_differences() {
    gradient_check(Stage::Hands);
}
