//! Training objectives on autodiff graphs.
//!
//! Motion tensors are `[B, N, J, 3]`. Every loss is computed per sample and
//! averaged over the batch. Ground-truth and conditioning inputs are plain
//! tensors; only the prediction carries gradients.

use ndarray::Array2;
use remos_autodiff::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_c: f64,
    pub lambda_r: f64,
    pub lambda_k: f64,
    pub lambda_v: f64,
    pub lambda_a: f64,
    pub lambda_b: f64,
    pub lambda_f: f64,
    /// First epoch at which the foot term is active.
    pub foot_start_epoch: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_c: 10.0,
            lambda_r: 10.0,
            lambda_k: 1.0,
            lambda_v: 10.0,
            lambda_a: 1.0,
            lambda_b: 1.0,
            lambda_f: 20.0,
            foot_start_epoch: 100,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_c,
            self.lambda_r,
            self.lambda_k,
            self.lambda_v,
            self.lambda_a,
            self.lambda_b,
            self.lambda_f,
        ];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(invalid("loss weights must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn foot_active(&self, epoch: usize) -> bool {
        epoch >= self.foot_start_epoch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconNorm {
    /// `‖X − X̂‖₂`.
    L2,
    /// `‖X − X̂‖₂²`.
    Squared,
}

/// Loss terms of one prediction, as graph nodes.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub recon: Var,
    pub reaction: Var,
    pub vel: Var,
    pub acc: Var,
    pub bone: Var,
    pub foot: Var,
}

/// Loss terms as numbers, for logging and for [`total_value`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub recon: f64,
    pub reaction: f64,
    pub vel: f64,
    pub acc: f64,
    pub bone: f64,
    pub foot: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn values(&self, g: &Graph, total: Var) -> LossValues {
        let v = |x: Var| g.value(x).item();
        LossValues {
            recon: v(self.recon),
            reaction: v(self.reaction),
            vel: v(self.vel),
            acc: v(self.acc),
            bone: v(self.bone),
            foot: v(self.foot),
            total: v(total),
        }
    }
}

fn dims4(s: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    if s.len() != 4 || s[3] != 3 {
        return Err(shape(format!("{what} must be [B, N, J, 3], got {s:?}")));
    }
    Ok((s[0], s[1], s[2]))
}

fn same_shape(g: &Graph, gt: &Tensor, pred: Var) -> Result<(usize, usize, usize)> {
    let d = dims4(g.shape(pred), "prediction")?;
    if gt.shape() != g.shape(pred) {
        return Err(shape(format!(
            "ground truth {:?} and prediction {:?} differ",
            gt.shape(),
            g.shape(pred)
        )));
    }
    Ok(d)
}

/// Per-sample squared norm over all axes but the batch axis, `[B]`.
fn per_sample_sq(g: &mut Graph, x: Var) -> Result<Var> {
    let b = g.shape(x)[0];
    let n = g.value(x).numel() / b.max(1);
    let sq = g.square(x)?;
    let flat = g.reshape(sq, &[b, n])?;
    Ok(g.sum_axis(flat, 1, false)?)
}

fn batch_mean_scaled(g: &mut Graph, per_sample: Var, scale: f64) -> Var {
    let m = g.mean(per_sample);
    g.scale(m, scale)
}

/// `‖X − X̂‖₂` (or its square) per sample.
pub fn recon_loss(g: &mut Graph, gt: &Tensor, pred: Var, norm: ReconNorm) -> Result<Var> {
    same_shape(g, gt, pred)?;
    let c = g.constant(gt.clone());
    let d = g.sub(c, pred)?;
    let sq = per_sample_sq(g, d)?;
    let per = match norm {
        ReconNorm::L2 => g.sqrt(sq),
        ReconNorm::Squared => sq,
    };
    Ok(g.mean(per))
}

/// Per-joint Euclidean distances `[B, N, J]` between two plain tensors.
fn plain_distances(a: &Tensor, b: &Tensor) -> Vec<f64> {
    a.data()
        .chunks_exact(3)
        .zip(b.data().chunks_exact(3))
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
        .collect()
}

/// Distance-weighted deviation of actor–reactor joint distances with
/// same-index pairing:
/// `(1/NJ) Σ exp(−d(x, y)) · |d(x, y) − d(x̂, y)|`.
///
/// All three inputs must share a coordinate frame in which distances are
/// meaningful (for wrist-relative hands, add the wrists back first).
pub fn reaction_loss(g: &mut Graph, gt: &Tensor, pred: Var, actor: &Tensor) -> Result<Var> {
    let (b, n, j) = same_shape(g, gt, pred)?;
    if actor.shape() != gt.shape() {
        return Err(shape(format!(
            "actor {:?} does not match reactor {:?}",
            actor.shape(),
            gt.shape()
        )));
    }
    let d_gt = plain_distances(gt, actor);
    let weights: Vec<f64> = d_gt.iter().map(|d| (-d).exp()).collect();
    let y = g.constant(actor.clone());
    let diff = g.sub(pred, y)?;
    let sq = g.square(diff)?;
    let d2 = g.sum_axis(sq, 3, false)?;
    let d_pred = g.sqrt(d2);
    let target = g.constant(Tensor::new(&[b, n, j], d_gt)?);
    let dev = g.sub(d_pred, target)?;
    let dev = g.abs(dev);
    let w = g.constant(Tensor::new(&[b, n, j], weights)?);
    let weighted = g.mul(dev, w)?;
    Ok(g.mean(weighted))
}

fn frame_diff(g: &mut Graph, x: Var, n: usize) -> Result<Var> {
    let next = g.slice(x, 1, 1, n - 1)?;
    let prev = g.slice(x, 1, 0, n - 1)?;
    Ok(g.sub(next, prev)?)
}

/// `1/(N−1) Σ ‖ΔX − ΔX̂‖²` over consecutive frames.
pub fn velocity_loss(g: &mut Graph, gt: &Tensor, pred: Var) -> Result<Var> {
    let (_, n, _) = same_shape(g, gt, pred)?;
    if n < 2 {
        return Err(invalid("velocity loss needs N >= 2"));
    }
    let c = g.constant(gt.clone());
    let vg = frame_diff(g, c, n)?;
    let vp = frame_diff(g, pred, n)?;
    let e = g.sub(vg, vp)?;
    let per = per_sample_sq(g, e)?;
    Ok(batch_mean_scaled(g, per, 1.0 / (n - 1) as f64))
}

/// `1/(N−2) Σ ‖Δ²X − Δ²X̂‖²` with second differences.
pub fn acceleration_loss(g: &mut Graph, gt: &Tensor, pred: Var) -> Result<Var> {
    let (_, n, _) = same_shape(g, gt, pred)?;
    if n < 3 {
        return Err(invalid("acceleration loss needs N >= 3"));
    }
    let c = g.constant(gt.clone());
    let vg = frame_diff(g, c, n)?;
    let ag = frame_diff(g, vg, n - 1)?;
    let vp = frame_diff(g, pred, n)?;
    let ap = frame_diff(g, vp, n - 1)?;
    let e = g.sub(ag, ap)?;
    let per = per_sample_sq(g, e)?;
    Ok(batch_mean_scaled(g, per, 1.0 / (n - 2) as f64))
}

/// Bone lengths `[B, N, bones]` of a graph motion. A bone `(child, None)`
/// runs from the local origin.
fn graph_bone_lengths(g: &mut Graph, x: Var, bones: &[(usize, Option<usize>)]) -> Result<Var> {
    let (b, n, j) = dims4(g.shape(x), "motion")?;
    let origin = g.constant(Tensor::zeros(&[b, n, 1, 3]));
    let padded = g.concat(&[x, origin], 2)?;
    let children: Vec<usize> = bones.iter().map(|&(c, _)| c).collect();
    let parents: Vec<usize> = bones.iter().map(|&(_, p)| p.unwrap_or(j)).collect();
    let c = g.index_select(padded, 2, &children)?;
    let p = g.index_select(padded, 2, &parents)?;
    let d = g.sub(c, p)?;
    let sq = g.square(d)?;
    let s = g.sum_axis(sq, 3, false)?;
    Ok(g.sqrt(s))
}

/// `‖B(X) − B(X̂)‖²` summed over frames and bones.
pub fn bone_loss(g: &mut Graph, gt: &Tensor, pred: Var, bones: &[(usize, Option<usize>)]) -> Result<Var> {
    same_shape(g, gt, pred)?;
    let j = gt.shape()[2];
    if let Some(bad) = bones.iter().find(|&&(c, p)| c >= j || p.is_some_and(|p| p >= j)) {
        return Err(invalid(format!("bone {bad:?} out of range for {j} joints")));
    }
    if bones.is_empty() {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let c = g.constant(gt.clone());
    let lg = graph_bone_lengths(g, c, bones)?;
    let lp = graph_bone_lengths(g, pred, bones)?;
    let e = g.sub(lg, lp)?;
    let per = per_sample_sq(g, e)?;
    Ok(g.mean(per))
}

/// `1/(N−1) Σ_n ‖(X̂ₙ₊₁ − X̂ₙ) · 1_foot(n)‖²` over the foot joints, with one
/// `N × |feet|` contact table per batch entry.
pub fn foot_loss(g: &mut Graph, pred: Var, feet: &[usize], contacts: &[Array2<bool>]) -> Result<Var> {
    let (b, n, j) = dims4(g.shape(pred), "prediction")?;
    if n < 2 {
        return Err(invalid("foot loss needs N >= 2"));
    }
    if contacts.len() != b || contacts.iter().any(|c| c.dim() != (n, feet.len())) {
        return Err(shape(format!(
            "expected {b} contact tables of {n} x {}",
            feet.len()
        )));
    }
    if feet.iter().any(|&f| f >= j) {
        return Err(invalid("foot joint index out of range"));
    }
    let x = g.index_select(pred, 2, feet)?;
    let v = frame_diff(g, x, n)?;
    let nf = feet.len();
    let mask = Tensor::from_fn(&[b, n - 1, nf, 3], |i| {
        let k = (i / 3) % nf;
        let f = (i / 3 / nf) % (n - 1);
        let s = i / 3 / nf / (n - 1);
        f64::from(u8::from(contacts[s][[f, k]]))
    });
    let masked = g.mask(v, mask)?;
    let per = per_sample_sq(g, masked)?;
    Ok(batch_mean_scaled(g, per, 1.0 / (n - 1) as f64))
}

/// `λc·Lc + λr·Lr + λk·(λv·Lvel + λa·Lacc + λb·Lbone + λf·Lfoot·[epoch ≥ start])`.
pub fn total_loss(g: &mut Graph, terms: &LossTerms, w: &LossWeights, epoch: usize) -> Result<Var> {
    let foot_w = if w.foot_active(epoch) { w.lambda_f } else { 0.0 };
    let kin = [
        (terms.vel, w.lambda_v),
        (terms.acc, w.lambda_a),
        (terms.bone, w.lambda_b),
        (terms.foot, foot_w),
    ];
    let mut k = g.scale(kin[0].0, kin[0].1);
    for &(v, l) in &kin[1..] {
        let s = g.scale(v, l);
        k = g.add(k, s)?;
    }
    let c = g.scale(terms.recon, w.lambda_c);
    let r = g.scale(terms.reaction, w.lambda_r);
    let k = g.scale(k, w.lambda_k);
    let t = g.add(c, r)?;
    Ok(g.add(t, k)?)
}

/// [`total_loss`] on plain numbers.
pub fn total_value(v: &LossValues, w: &LossWeights, epoch: usize) -> f64 {
    let foot_w = if w.foot_active(epoch) { w.lambda_f } else { 0.0 };
    w.lambda_c * v.recon
        + w.lambda_r * v.reaction
        + w.lambda_k * (w.lambda_v * v.vel + w.lambda_a * v.acc + w.lambda_b * v.bone + foot_w * v.foot)
}
