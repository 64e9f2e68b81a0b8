use proptest::prelude::*;
use remos_autodiff::{
    Adam, AdamConfig, AutodiffError, Graph, NamedTensor, ParamStore, StepLr, Tensor,
};

#[test]
fn matmul_hand_example() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let b = g.constant(Tensor::new(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap());
    let c = g.matmul(a, b, false).unwrap();
    assert_eq!(g.value(c).data(), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn silu_at_zero_is_zero() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::scalar(0.0));
    let y = g.silu(x);
    assert_eq!(g.value(y).item(), 0.0);
}

#[test]
fn square_derivative() {
    let mut g = Graph::new();
    let x = g.input(Tensor::scalar(3.0));
    let y = g.square(x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(&g, x).unwrap().item(), 6.0);
}

#[test]
fn constant_output_gives_zero_parameter_gradient() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::full(&[3], 2.0)).unwrap();
    let mut g = Graph::new();
    let wv = g.param(&store, w);
    let zero = g.scale(wv, 0.0);
    let c = g.constant(Tensor::full(&[3], 4.0));
    let y = g.add(zero, c).unwrap();
    let s = g.sum(y);
    g.backward_into(s, &mut store).unwrap();
    assert_eq!(store.grad(w).unwrap().data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn backward_requires_scalar() {
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros(&[2]));
    assert_eq!(
        g.backward(x).unwrap_err(),
        AutodiffError::NonScalar(vec![2])
    );
}

#[test]
fn shape_errors_report_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[4, 2]));
    match g.matmul(a, b, false).unwrap_err() {
        AutodiffError::ShapeMismatch { lhs, rhs, .. } => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![4, 2]);
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(g.add(a, b).is_err());
}

#[test]
fn batch_norm_standardizes_features() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_fn(&[4, 5, 3], |i| ((i * 7919) % 31) as f64 * 0.3 - 2.0));
    let (y, stats) = g.batch_norm(x, 1e-12).unwrap();
    let v = g.value(y).data();
    for f in 0..3 {
        let col: Vec<f64> = v.iter().skip(f).step_by(3).copied().collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / col.len() as f64;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-6);
    }
    assert_eq!(stats.mean.len(), 3);
}

#[test]
fn adam_first_step_matches_hand_formula() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::scalar(0.5)).unwrap();
    let cfg = AdamConfig::default();
    let mut opt = Adam::new(cfg, StepLr::default(), &store);
    // d(w)/dw = 1
    let mut g = Graph::new();
    let wv = g.param(&store, w);
    let s = g.sum(wv);
    g.backward_into(s, &mut store).unwrap();
    opt.step(&mut store).unwrap();
    // m̂ = 1, v̂ = 1 after bias correction -> Δ = lr / (1 + eps)
    let m = (1.0 - 0.9) * 1.0;
    let v = (1.0 - 0.999) * 1.0;
    let m_hat = m / (1.0 - 0.9);
    let v_hat = v / (1.0 - 0.999);
    let expected = 0.5 - 1e-5 * m_hat / (f64::sqrt(v_hat) + 1e-8);
    assert_eq!(store.value(w).item(), expected);
    assert!(((0.5 - store.value(w).item()) - 1e-5).abs() < 1e-12);
    assert!(!store.has_gradients());
}

#[test]
fn adam_zero_gradient_leaves_parameter() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::full(&[2], 1.25)).unwrap();
    let mut opt = Adam::new(AdamConfig::default(), StepLr::default(), &store);
    let mut g = Graph::new();
    let wv = g.param(&store, w);
    let z = g.scale(wv, 0.0);
    let s = g.sum(z);
    g.backward_into(s, &mut store).unwrap();
    opt.step(&mut store).unwrap();
    assert_eq!(store.value(w).data(), &[1.25, 1.25]);
}

#[test]
fn adam_without_gradients_is_an_error() {
    let mut store = ParamStore::new();
    store.add("w", Tensor::scalar(1.0)).unwrap();
    let mut opt = Adam::new(AdamConfig::default(), StepLr::default(), &store);
    assert_eq!(opt.step(&mut store), Err(AutodiffError::MissingGradients));
}

#[test]
fn step_decay_after_ten_epochs() {
    let store = ParamStore::new();
    let mut opt = Adam::new(AdamConfig::default(), StepLr::default(), &store);
    for epoch in 1..=10 {
        opt.end_epoch();
        if epoch < 5 {
            assert_eq!(opt.lr(), 1e-5);
        }
    }
    assert_eq!(opt.lr(), 1e-5 * 0.99 * 0.99);
}

#[test]
fn named_tensors_round_trip_through_json() {
    let mut store = ParamStore::new();
    store
        .add("a", Tensor::from_fn(&[2, 3], |i| (i as f64).sin() / 7.0))
        .unwrap();
    store.add("b", Tensor::scalar(std::f64::consts::PI)).unwrap();
    let text = serde_json::to_string(&store.to_named()).unwrap();
    let back: Vec<NamedTensor> = serde_json::from_str(&text).unwrap();
    let restored = ParamStore::from_named(&back).unwrap();
    for ((_, p), (_, q)) in store.iter().zip(restored.iter()) {
        assert_eq!(p.value, q.value);
    }
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(values in proptest::collection::vec(-10.0f64..10.0, 12)) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[3, 4], values).unwrap());
        let y = g.softmax(x, 1).unwrap();
        for row in g.value(y).data().chunks(4) {
            prop_assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn graph_evaluation_is_deterministic(values in proptest::collection::vec(-3.0f64..3.0, 6)) {
        let run = || {
            let mut g = Graph::new();
            let x = g.input(Tensor::new(&[2, 3], values.clone()).unwrap());
            let s = g.softmax(x, 1).unwrap();
            let e = g.silu(s);
            let m = g.mean(e);
            let grads = g.backward(m).unwrap();
            (g.value(m).item(), grads.get(&g, x).unwrap())
        };
        let (a, ga) = run();
        let (b, gb) = run();
        prop_assert_eq!(a.to_bits(), b.to_bits());
        prop_assert_eq!(ga, gb);
    }
}
