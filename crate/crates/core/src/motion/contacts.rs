use ndarray::Array2;

use super::sequence::MotionSequence;
use super::skeleton::Skeleton;
use crate::error::{invalid, Result};

pub const DEFAULT_HEIGHT_EPS: f64 = 0.005;
pub const DEFAULT_SPEED_EPS: f64 = 0.002;
/// Percentile of foot heights taken as the ground plane.
pub const GROUND_PERCENTILE: f64 = 0.02;

const UP: usize = 1;

/// Foot-ground contact indicator, `N × |foot joints|`.
///
/// A foot joint is in contact at frame `n` when its height is within
/// `height_eps` of the ground plane and its displacement to the next frame
/// (previous frame for the last one) is at most `speed_eps`.
pub fn detect_foot_contacts(
    seq: &MotionSequence,
    skeleton: &Skeleton,
    height_eps: f64,
    speed_eps: f64,
) -> Result<Array2<bool>> {
    let n = seq.num_frames();
    if n < 2 {
        return Err(invalid("foot contacts need N >= 2"));
    }
    let pos = seq.positions();
    let feet = skeleton.foot_joints();
    let mut heights: Vec<f64> = (0..n)
        .flat_map(|f| feet.iter().map(move |&j| pos[[f, j, UP]]))
        .collect();
    heights.sort_by(f64::total_cmp);
    let ground = percentile_sorted(&heights, GROUND_PERCENTILE);
    Ok(Array2::from_shape_fn((n, feet.len()), |(f, k)| {
        let j = feet[k];
        let (a, b) = if f + 1 < n { (f, f + 1) } else { (f - 1, f) };
        let mut d2 = 0.0;
        for c in 0..3 {
            let d = pos[[b, j, c]] - pos[[a, j, c]];
            d2 += d * d;
        }
        pos[[f, j, UP]] <= ground + height_eps && d2.sqrt() <= speed_eps
    }))
}

/// Linear-interpolated percentile of an ascending slice.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = pos - lo as f64;
    sorted[lo] * (1.0 - t) + sorted[hi] * t
}
