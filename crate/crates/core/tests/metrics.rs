use ndarray::Array3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use remos_core::metrics::{
    diversity, fid, mpjpe, mpjve, multimodality, raw_features, FeatureExtractor, FID_REGULARIZER,
};

fn random(rng: &mut ChaCha8Rng, dim: (usize, usize, usize)) -> Array3<f64> {
    Array3::from_shape_simple_fn(dim, || rng.random_range(-1.0..1.0))
}

fn random_set(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

#[test]
fn constant_shift_is_ten_millimeters() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gt = random(&mut rng, (20, 11, 3));
    let mut shifted = gt.clone();
    shifted.slice_mut(ndarray::s![.., .., 0]).mapv_inplace(|v| v + 0.01);
    assert!((mpjpe(gt.view(), shifted.view()).unwrap() - 10.0).abs() < 1e-9);
    assert!(mpjve(gt.view(), shifted.view()).unwrap() < 1e-9);
    assert_eq!(mpjpe(gt.view(), gt.view()).unwrap(), 0.0);
    assert_eq!(mpjve(gt.view(), gt.view()).unwrap(), 0.0);
}

#[test]
fn position_and_velocity_errors_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (n, j) = (7, 5);
    let a = random(&mut rng, (n, j, 3));
    let b = random(&mut rng, (n, j, 3));
    let mut pos = 0.0;
    let mut vel = 0.0;
    for f in 0..n {
        for k in 0..j {
            let mut d = 0.0;
            let mut dv = 0.0;
            for c in 0..3 {
                d += (a[[f, k, c]] - b[[f, k, c]]).powi(2);
                if f > 0 {
                    dv += ((a[[f, k, c]] - a[[f - 1, k, c]]) - (b[[f, k, c]] - b[[f - 1, k, c]])).powi(2);
                }
            }
            pos += d.sqrt();
            vel += dv.sqrt();
        }
    }
    let p = mpjpe(a.view(), b.view()).unwrap();
    let v = mpjve(a.view(), b.view()).unwrap();
    assert!((p - 1000.0 * pos / (n * j) as f64).abs() < 1e-9);
    assert!((v - 1000.0 * vel / ((n - 1) * j) as f64).abs() < 1e-9);
}

#[test]
fn error_metric_shape_errors() {
    let a = Array3::zeros((3, 2, 3));
    let b = Array3::zeros((3, 3, 3));
    assert!(mpjpe(a.view(), b.view()).is_err());
    let one = Array3::zeros((1, 2, 3));
    assert!(mpjve(one.view(), one.view()).is_err());
}

#[test]
fn fid_of_identical_sets_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random_set(&mut rng, 50, 6);
    let r = fid(&a, &a).unwrap();
    assert!(r.distance.abs() < 1e-8);
    assert_eq!(r.regularization, 0.0);
}

#[test]
fn fid_of_shifted_unit_gaussians_is_four() {
    // Points with sample mean 0 and unbiased variance 1, then shifted by 2.
    let base = [-1.5, -0.5, 0.5, 1.5];
    let var: f64 = base.iter().map(|v: &f64| v * v).sum::<f64>() / 3.0;
    let a: Vec<Vec<f64>> = base.iter().map(|v| vec![v / var.sqrt()]).collect();
    let b: Vec<Vec<f64>> = a.iter().map(|v| vec![v[0] + 2.0]).collect();
    let r = fid(&a, &b).unwrap();
    assert!((r.distance - 4.0).abs() < 1e-6, "{r:?}");
}

#[test]
fn fid_matches_closed_form_for_diagonal_covariances() {
    // Axis-aligned point sets: per-axis Fréchet terms add up.
    let a: Vec<Vec<f64>> = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 2.0], vec![0.0, -2.0]];
    let b: Vec<Vec<f64>> = vec![vec![4.0, 1.0], vec![2.0, 1.0], vec![3.0, 1.5], vec![3.0, 0.5]];
    // Variances: A = (2/3, 8/3), B = (2/3, 1/6); means differ by (3, 1).
    let term = |x: f64, y: f64| x + y - 2.0 * (x * y).sqrt();
    let expected = 9.0 + 1.0 + term(2.0 / 3.0, 2.0 / 3.0) + term(8.0 / 3.0, 1.0 / 6.0);
    let r = fid(&a, &b).unwrap();
    assert!((r.distance - expected).abs() < 1e-10);
}

#[test]
fn degenerate_covariance_is_regularized() {
    // Three samples in five dimensions: rank-deficient covariance.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random_set(&mut rng, 3, 5);
    let r = fid(&a, &a).unwrap();
    assert_eq!(r.regularization, FID_REGULARIZER);
    assert!(r.distance.abs() < 1e-8);
    assert!(fid(&a[..1], &a).is_err());
    assert!(fid(&a, &random_set(&mut rng, 3, 4)).is_err());
}

#[test]
fn diversity_two_points() {
    let f = vec![vec![3.0, 4.0], vec![-3.0, -4.0]];
    let r = diversity(&f, 1, 0).unwrap();
    assert_eq!(r.value, 10.0);
    assert!(diversity(&f, 2, 0).is_err());
}

#[test]
fn identical_samples_have_no_spread() {
    let f = vec![vec![1.0, 2.0, 3.0]; 6];
    assert_eq!(diversity(&f, 3, 9).unwrap().value, 0.0);
    let m = multimodality(&[f.clone(), f]).unwrap();
    assert_eq!(m.mean, 0.0);
    assert_eq!(m.ci95, 0.0);
}

#[test]
fn diversity_matches_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = random_set(&mut rng, 10, 4);
    let r = diversity(&f, 4, 17).unwrap();
    assert!(r.subset_a.iter().all(|i| !r.subset_b.contains(i)));
    let mut total = 0.0;
    for &i in &r.subset_a {
        for &k in &r.subset_b {
            total += f[i].iter().zip(&f[k]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        }
    }
    assert!((r.value - total / 16.0).abs() < 1e-12);
    assert_eq!(diversity(&f, 4, 17).unwrap(), r);

    // With S = 1 and a two-element set, every split is the single pairing.
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    for seed in 0..5 {
        assert!((diversity(&f[..2], 1, seed).unwrap().value - d(&f[0], &f[1])).abs() < 1e-15);
    }
}

#[test]
fn multimodality_matches_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let conds: Vec<Vec<Vec<f64>>> = (0..4).map(|_| random_set(&mut rng, 5, 3)).collect();
    let per: Vec<f64> = conds
        .iter()
        .map(|reps| {
            let mut s = 0.0;
            let mut c = 0;
            for i in 0..reps.len() {
                for k in 0..reps.len() {
                    if i != k {
                        s += reps[i].iter().zip(&reps[k]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                        c += 1;
                    }
                }
            }
            s / c as f64
        })
        .collect();
    let mean = per.iter().sum::<f64>() / 4.0;
    let sd = (per.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
    let m = multimodality(&conds).unwrap();
    assert!((m.mean - mean).abs() < 1e-12);
    assert!((m.ci95 - 1.96 * sd / 2.0).abs() < 1e-12);
    assert!(multimodality(&[vec![vec![1.0]]]).is_err());
}

#[test]
fn feature_extractor_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let motions: Vec<Array3<f64>> = (0..30).map(|_| random(&mut rng, (4, 2, 3))).collect();
    let views: Vec<_> = motions.iter().map(|m| m.view()).collect();
    assert_eq!(raw_features(views[0]).len(), 4 * 2 * 3 + 3 * 2 * 3);
    let fx = FeatureExtractor::fit(&views, 5).unwrap();
    let feats = fx.extract_all(&views).unwrap();
    assert_eq!(feats[0].len(), 5);
    // Projected features of the fitting set are centered.
    for k in 0..5 {
        let m: f64 = feats.iter().map(|f| f[k]).sum::<f64>() / 30.0;
        assert!(m.abs() < 1e-10);
    }
    // Leading component carries the most variance.
    let var = |k: usize| feats.iter().map(|f| f[k] * f[k]).sum::<f64>();
    assert!((1..5).all(|k| var(0) >= var(k)));
    assert!(FeatureExtractor::fit(&views, 43).is_err());
    let other = random(&mut rng, (5, 2, 3));
    assert!(fx.extract(other.view()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fid_is_symmetric(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_set(&mut rng, 20, 3);
        let b: Vec<Vec<f64>> = random_set(&mut rng, 25, 3).into_iter().map(|v| v.iter().map(|x| 2.0 * x + 0.5).collect()).collect();
        let ab = fid(&a, &b).unwrap().distance;
        let ba = fid(&b, &a).unwrap().distance;
        prop_assert!((ab - ba).abs() < 1e-8);
        prop_assert!(ab >= 0.0);
    }

    #[test]
    fn mpjpe_zero_only_for_identical(seed in 0u64..10_000, eps in 1e-6f64..1e-2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, (3, 2, 3));
        let mut b = a.clone();
        b[[1, 1, 2]] += eps;
        prop_assert!(mpjpe(a.view(), b.view()).unwrap() > 0.0);
        prop_assert!(mpjve(a.view(), b.view()).unwrap() > 0.0);
    }
}
