//! Central finite-difference checks for every differentiable op.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use remos_autodiff::{Graph, Tensor, Var};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Checks d(sum(w ⊙ f(inputs)))/d(inputs) against central differences.
/// The random weights `w` make the scalar sensitive to every output entry.
fn check(inputs: Vec<Tensor>, f: impl Fn(&mut Graph, &[Var]) -> Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let eval = |values: &[Tensor], weights: Option<&Tensor>| -> (f64, Tensor, Vec<Option<Tensor>>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars);
        let w = weights
            .cloned()
            .unwrap_or_else(|| Tensor::full(g.shape(out), 1.0));
        let wv = g.constant(w.clone());
        let prod = g.mul(out, wv).unwrap();
        let s = g.sum(prod);
        let grads = g.backward(s).unwrap();
        let gs = vars.iter().map(|&v| grads.get(&g, v)).collect();
        (g.value(s).item(), w, gs)
    };
    // Probe output shape once to draw weights.
    let (_, ones, _) = eval(&inputs, None);
    let weights = Tensor::from_fn(ones.shape(), |_| rng.random_range(0.5..1.5));
    let (_, _, analytic) = eval(&inputs, Some(&weights));
    for (which, input) in inputs.iter().enumerate() {
        let grad = analytic[which].as_ref().expect("input gradient");
        for idx in 0..input.numel() {
            let mut plus = inputs.clone();
            plus[which].data_mut()[idx] += H;
            let mut minus = inputs.clone();
            minus[which].data_mut()[idx] -= H;
            let fd = (eval(&plus, Some(&weights)).0 - eval(&minus, Some(&weights)).0) / (2.0 * H);
            let ad = grad.data()[idx];
            let rel = (fd - ad).abs() / fd.abs().max(ad.abs()).max(1e-3);
            assert!(
                rel <= TOL,
                "input {which} entry {idx}: analytic {ad} vs numeric {fd} (rel {rel})"
            );
        }
    }
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

#[test]
fn matmul_shared_and_batched() {
    let mut r = rng();
    check(vec![random(&[2, 3, 4], &mut r), random(&[4, 5], &mut r)], |g, v| {
        g.matmul(v[0], v[1], false).unwrap()
    });
    check(vec![random(&[2, 3, 4], &mut r), random(&[5, 4], &mut r)], |g, v| {
        g.matmul(v[0], v[1], true).unwrap()
    });
    check(vec![random(&[2, 3, 4], &mut r), random(&[2, 4, 3], &mut r)], |g, v| {
        g.matmul(v[0], v[1], false).unwrap()
    });
    check(vec![random(&[2, 3, 4], &mut r), random(&[2, 5, 4], &mut r)], |g, v| {
        g.matmul(v[0], v[1], true).unwrap()
    });
}

#[test]
fn broadcast_arithmetic() {
    let mut r = rng();
    check(vec![random(&[2, 3, 4], &mut r), random(&[4], &mut r)], |g, v| {
        g.add(v[0], v[1]).unwrap()
    });
    check(vec![random(&[2, 3, 4], &mut r), random(&[2, 1, 4], &mut r)], |g, v| {
        g.sub(v[0], v[1]).unwrap()
    });
    check(vec![random(&[2, 3, 4], &mut r), random(&[3, 1], &mut r)], |g, v| {
        g.mul(v[0], v[1]).unwrap()
    });
    check(vec![random(&[3, 4], &mut r), random(&[3, 4], &mut r)], |g, v| {
        g.mul(v[0], v[1]).unwrap()
    });
}

#[test]
fn unary_ops() {
    let mut r = rng();
    let x = random(&[3, 4], &mut r);
    check(vec![x.clone()], |g, v| g.exp(v[0]));
    check(vec![x.clone()], |g, v| g.neg(v[0]));
    check(vec![x.clone()], |g, v| g.scale(v[0], -2.5));
    check(vec![x.clone()], |g, v| g.add_scalar(v[0], 0.3));
    check(vec![x.clone()], |g, v| g.silu(v[0]));
    check(vec![x.clone()], |g, v| g.abs(v[0]));
    check(vec![x.clone()], |g, v| g.square(v[0]).unwrap());
    let positive = Tensor::from_fn(&[3, 4], |i| 0.5 + i as f64 * 0.1);
    check(vec![positive.clone()], |g, v| g.sqrt(v[0]));
    check(vec![positive], |g, v| g.recip(v[0]));
    check(vec![x], |g, v| {
        let m = Tensor::from_fn(&[3, 4], |i| (i % 2) as f64);
        g.mask(v[0], m).unwrap()
    });
}

#[test]
fn normalizations() {
    let mut r = rng();
    let x = random(&[2, 3, 4], &mut r);
    for axis in 0..3 {
        check(vec![x.clone()], |g, v| g.softmax(v[0], axis).unwrap());
    }
    check(vec![x.clone()], |g, v| g.batch_norm(v[0], 1e-5).unwrap().0);
    check(vec![x], |g, v| g.layer_norm(v[0], 1e-5).unwrap());
}

#[test]
fn reductions_and_layout() {
    let mut r = rng();
    let x = random(&[2, 3, 4], &mut r);
    check(vec![x.clone()], |g, v| g.sum(v[0]));
    check(vec![x.clone()], |g, v| g.mean(v[0]));
    for axis in 0..3 {
        check(vec![x.clone()], |g, v| g.sum_axis(v[0], axis, axis == 1).unwrap());
    }
    check(vec![x.clone()], |g, v| g.reshape(v[0], &[6, 4]).unwrap());
    check(vec![x.clone()], |g, v| g.permute(v[0], &[2, 0, 1]).unwrap());
    check(vec![x.clone()], |g, v| g.transpose(v[0], 0, 2).unwrap());
    check(vec![x.clone()], |g, v| g.slice(v[0], 1, 1, 2).unwrap());
    check(vec![x.clone()], |g, v| g.index_select(v[0], 2, &[3, 0, 0, 1]).unwrap());
    check(vec![x, random(&[2, 2, 4], &mut r)], |g, v| {
        g.concat(&[v[0], v[1]], 1).unwrap()
    });
}

#[test]
fn two_layer_perceptron_loss() {
    let mut r = rng();
    let inputs = vec![
        random(&[5, 3], &mut r),
        random(&[3, 8], &mut r),
        random(&[8], &mut r),
        random(&[8, 2], &mut r),
        random(&[5, 2], &mut r),
    ];
    check(inputs, |g, v| {
        let h = g.matmul(v[0], v[1], false).unwrap();
        let h = g.add(h, v[2]).unwrap();
        let h = g.silu(h);
        let y = g.matmul(h, v[3], false).unwrap();
        let d = g.sub(y, v[4]).unwrap();
        let sq = g.square(d).unwrap();
        g.mean(sq)
    });
}
