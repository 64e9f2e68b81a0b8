//! Evaluation measures on plain arrays. Positions are meters; MPJPE and
//! MPJVE are reported in millimeters.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::ArrayView3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};

fn check_pair(a: &ArrayView3<f64>, b: &ArrayView3<f64>) -> Result<()> {
    if a.dim() != b.dim() || a.dim().2 != 3 {
        return Err(shape(format!("motions {:?} and {:?} differ", a.dim(), b.dim())));
    }
    Ok(())
}

/// Mean per-joint position error in millimeters.
pub fn mpjpe(gt: ArrayView3<f64>, pred: ArrayView3<f64>) -> Result<f64> {
    check_pair(&gt, &pred)?;
    let (n, j, _) = gt.dim();
    if n * j == 0 {
        return Err(invalid("MPJPE of an empty motion"));
    }
    let mut total = 0.0;
    for f in 0..n {
        for k in 0..j {
            let d2: f64 = (0..3).map(|c| (gt[[f, k, c]] - pred[[f, k, c]]).powi(2)).sum();
            total += d2.sqrt();
        }
    }
    Ok(1000.0 * total / (n * j) as f64)
}

/// Mean per-joint error of frame-difference velocities in millimeters
/// (per frame, not per second).
pub fn mpjve(gt: ArrayView3<f64>, pred: ArrayView3<f64>) -> Result<f64> {
    check_pair(&gt, &pred)?;
    let (n, j, _) = gt.dim();
    if n < 2 || j == 0 {
        return Err(invalid("MPJVE needs N >= 2 frames"));
    }
    let mut total = 0.0;
    for f in 0..n - 1 {
        for k in 0..j {
            let d2: f64 = (0..3)
                .map(|c| {
                    let vg = gt[[f + 1, k, c]] - gt[[f, k, c]];
                    let vp = pred[[f + 1, k, c]] - pred[[f, k, c]];
                    (vg - vp).powi(2)
                })
                .sum();
            total += d2.sqrt();
        }
    }
    Ok(1000.0 * total / ((n - 1) * j) as f64)
}

/// Positions followed by frame-difference velocities, flattened.
pub fn raw_features(motion: ArrayView3<f64>) -> Vec<f64> {
    let (n, j, _) = motion.dim();
    let mut out: Vec<f64> = motion.iter().copied().collect();
    for f in 0..n.saturating_sub(1) {
        for k in 0..j {
            for c in 0..3 {
                out.push(motion[[f + 1, k, c]] - motion[[f, k, c]]);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractorConfig {
    pub window: usize,
    pub dim: usize,
}

/// Principal-component projection of [`raw_features`], fitted on
/// ground-truth windows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    pub config: FeatureExtractorConfig,
    mean: DVector<f64>,
    /// `dim × D` orthonormal rows.
    basis: DMatrix<f64>,
}

impl FeatureExtractor {
    pub fn fit(motions: &[ArrayView3<f64>], dim: usize) -> Result<Self> {
        let first = motions.first().ok_or_else(|| invalid("no motions to fit features on"))?;
        let window = first.dim().0;
        let rows: Vec<Vec<f64>> = motions
            .iter()
            .map(|m| {
                if m.dim() != first.dim() {
                    return Err(shape(format!("feature inputs {:?} and {:?} differ", first.dim(), m.dim())));
                }
                Ok(raw_features(*m))
            })
            .collect::<Result<_>>()?;
        let d = rows[0].len();
        let rank = d.min(rows.len());
        if dim == 0 || dim > rank {
            return Err(invalid(format!(
                "projection dimension {dim} must be in 1..={rank} (feature dim {d}, {} samples)",
                rows.len()
            )));
        }
        let data = DMatrix::from_fn(rows.len(), d, |i, k| rows[i][k]);
        let mean = DVector::from_fn(d, |k, _| data.column(k).mean());
        let centered = DMatrix::from_fn(rows.len(), d, |i, k| data[(i, k)] - mean[k]);
        let svd = centered.svd(false, true);
        let v_t = svd.v_t.ok_or_else(|| invalid("SVD did not converge"))?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let basis = DMatrix::from_fn(dim, d, |r, k| v_t[(order[r], k)]);
        Ok(Self {
            config: FeatureExtractorConfig { window, dim },
            mean,
            basis,
        })
    }

    pub fn extract(&self, motion: ArrayView3<f64>) -> Result<Vec<f64>> {
        let raw = raw_features(motion);
        if raw.len() != self.mean.len() || motion.dim().0 != self.config.window {
            return Err(shape(format!("motion {:?} does not match the fitted extractor", motion.dim())));
        }
        let x = DVector::from_fn(raw.len(), |k, _| raw[k] - self.mean[k]);
        Ok((&self.basis * x).iter().copied().collect())
    }

    pub fn extract_all(&self, motions: &[ArrayView3<f64>]) -> Result<Vec<Vec<f64>>> {
        motions.iter().map(|m| self.extract(*m)).collect()
    }
}

fn to_matrix(set: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    if set.len() < 2 {
        return Err(invalid(format!("{what} needs at least 2 samples, got {}", set.len())));
    }
    let d = set[0].len();
    if d == 0 || set.iter().any(|r| r.len() != d) {
        return Err(shape(format!("{what} rows must share a non-zero dimension")));
    }
    Ok(DMatrix::from_fn(set.len(), d, |i, k| set[i][k]))
}

fn mean_and_cov(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = m.shape();
    let mean = DVector::from_fn(d, |k, _| m.column(k).mean());
    let c = DMatrix::from_fn(n, d, |i, k| m[(i, k)] - mean[k]);
    let cov = (c.transpose() * &c) / (n - 1) as f64;
    (mean, cov)
}

const NEGATIVE_EIGEN_TOL: f64 = 1e-10;
/// Added to both covariance diagonals when either is singular.
pub const FID_REGULARIZER: f64 = 1e-6;

fn clamped_eigenvalues(m: &DMatrix<f64>, what: &str) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let sym = (m + m.transpose()) * 0.5;
    let mut eig = SymmetricEigen::new(sym);
    for v in eig.eigenvalues.iter_mut() {
        if *v < 0.0 {
            if *v < -NEGATIVE_EIGEN_TOL {
                log::warn!("{what}: clamping eigenvalue {v:e} to zero");
            }
            *v = 0.0;
        }
    }
    eig
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = clamped_eigenvalues(m, "covariance square root");
    let s = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    &eig.eigenvectors * s * eig.eigenvectors.transpose()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidResult {
    pub distance: f64,
    /// Diagonal term added to both covariances (0 when none was needed).
    pub regularization: f64,
}

fn is_singular(cov: &DMatrix<f64>) -> bool {
    let eig = SymmetricEigen::new((cov + cov.transpose()) * 0.5);
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    min <= 1e-12 * max.max(1e-300)
}

/// Fréchet distance between Gaussian fits (unbiased covariance) of two
/// feature sets: `‖μa − μb‖² + Tr(Σa + Σb − 2 (Σa Σb)^{1/2})`.
pub fn fid(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<FidResult> {
    let (ma, mb) = (to_matrix(a, "FID set A")?, to_matrix(b, "FID set B")?);
    if ma.ncols() != mb.ncols() {
        return Err(shape(format!("feature dimensions {} and {} differ", ma.ncols(), mb.ncols())));
    }
    let (mu_a, mut ca) = mean_and_cov(&ma);
    let (mu_b, mut cb) = mean_and_cov(&mb);
    let mut regularization = 0.0;
    if is_singular(&ca) || is_singular(&cb) {
        regularization = FID_REGULARIZER;
        log::warn!("singular feature covariance, adding {regularization:e} to the diagonal");
        for k in 0..ca.nrows() {
            ca[(k, k)] += regularization;
            cb[(k, k)] += regularization;
        }
    }
    let sa = psd_sqrt(&ca);
    let inner = &sa * &cb * &sa;
    let eig = clamped_eigenvalues(&inner, "FID cross term");
    let cross: f64 = eig.eigenvalues.iter().map(|v| v.sqrt()).sum();
    let diff = &mu_a - &mu_b;
    let distance = diff.norm_squared() + ca.trace() + cb.trace() - 2.0 * cross;
    Ok(FidResult {
        distance: distance.max(0.0),
        regularization,
    })
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiversityResult {
    pub value: f64,
    pub subset_a: Vec<usize>,
    pub subset_b: Vec<usize>,
}

/// Mean distance over all `S × S` cross pairs of two disjoint subsets of
/// size `S`, drawn with `seed`.
pub fn diversity(features: &[Vec<f64>], subset: usize, seed: u64) -> Result<DiversityResult> {
    if subset == 0 || features.len() < 2 * subset {
        return Err(invalid(format!(
            "diversity needs at least {} samples for subsets of {subset}, got {}",
            2 * subset,
            features.len()
        )));
    }
    let mut idx: Vec<usize> = (0..features.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (subset_a, subset_b) = (idx[..subset].to_vec(), idx[subset..2 * subset].to_vec());
    let mut total = 0.0;
    for &i in &subset_a {
        for &k in &subset_b {
            total += distance(&features[i], &features[k]);
        }
    }
    Ok(DiversityResult {
        value: total / (subset * subset) as f64,
        subset_a,
        subset_b,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    /// Half-width of the 95% normal-approximation interval.
    pub ci95: f64,
}

/// Mean pairwise distance among the repeats of each condition, averaged
/// over conditions. The interval is `1.96·sd/√C` over the per-condition
/// values (0 for a single condition).
pub fn multimodality(per_condition: &[Vec<Vec<f64>>]) -> Result<MeanCi> {
    if per_condition.is_empty() {
        return Err(invalid("multimodality needs at least one condition"));
    }
    let mut values = Vec::with_capacity(per_condition.len());
    for reps in per_condition {
        let r = reps.len();
        if r < 2 {
            return Err(invalid(format!("multimodality needs R >= 2 repeats, got {r}")));
        }
        let mut total = 0.0;
        for i in 0..r {
            for k in i + 1..r {
                total += distance(&reps[i], &reps[k]);
            }
        }
        values.push(total / (r * (r - 1) / 2) as f64);
    }
    let c = values.len() as f64;
    let mean = values.iter().sum::<f64>() / c;
    let ci95 = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (c - 1.0);
        1.96 * var.sqrt() / c.sqrt()
    } else {
        0.0
    };
    Ok(MeanCi { mean, ci95 })
}
