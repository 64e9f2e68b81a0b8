//! Binary hand-interaction masks from wrist-to-body proximity.

use ndarray::{Array2, ArrayView3, Axis};

use super::sequence::InteractionPair;
use super::skeleton::{Side, Skeleton};
use crate::error::{invalid, shape, Result};

/// Default wrist-to-body distance below which a hand counts as interacting.
pub const DEFAULT_MASK_THRESHOLD: f64 = 0.10;

/// Per-frame, per-finger-joint masks (`N × J_H`). All joints of one hand
/// share a value within a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct HandInteractionMask {
    pub actor: Array2<bool>,
    pub reactor: Array2<bool>,
    pub threshold: f64,
}

impl HandInteractionMask {
    /// Masks with every entry set to `value`.
    pub fn constant(frames: usize, hand_joints: usize, value: bool) -> Self {
        Self {
            actor: Array2::from_elem((frames, hand_joints), value),
            reactor: Array2::from_elem((frames, hand_joints), value),
            threshold: f64::NAN,
        }
    }

    pub fn num_frames(&self) -> usize {
        self.actor.dim().0
    }

    pub fn actor_side(&self, skeleton: &Skeleton, frame: usize, side: Side) -> bool {
        side_any(&self.actor, skeleton, frame, side)
    }

    pub fn reactor_side(&self, skeleton: &Skeleton, frame: usize, side: Side) -> bool {
        side_any(&self.reactor, skeleton, frame, side)
    }

    /// Fraction of frames where any hand of either character is active.
    pub fn active_frame_fraction(&self) -> f64 {
        let n = self.num_frames();
        let active = (0..n)
            .filter(|&f| {
                self.actor.index_axis(Axis(0), f).iter().any(|&b| b)
                    || self.reactor.index_axis(Axis(0), f).iter().any(|&b| b)
            })
            .count();
        active as f64 / n.max(1) as f64
    }

    pub fn actor_values(&self) -> Vec<f64> {
        self.actor.iter().map(|&b| f64::from(u8::from(b))).collect()
    }

    pub fn reactor_values(&self) -> Vec<f64> {
        self.reactor.iter().map(|&b| f64::from(u8::from(b))).collect()
    }
}

fn side_any(mask: &Array2<bool>, skeleton: &Skeleton, frame: usize, side: Side) -> bool {
    skeleton.hand_range(side).any(|h| mask[[frame, h]])
}

/// Masks for a pair in a shared coordinate frame (world or normalized).
pub fn compute_hand_masks(pair: &InteractionPair, threshold: f64) -> Result<HandInteractionMask> {
    let s = pair.skeleton();
    let actor = pair.actor().select(s.body_joints());
    let reactor = pair.reactor().select(s.body_joints());
    hand_masks_from_bodies(actor.view(), reactor.view(), s, threshold)
}

/// Masks from body-joint arrays (`N × J_B × 3`, body-joint order of the
/// skeleton). A hand is active in frame `n` when its wrist lies closer than
/// `threshold` to any body joint of the other character.
pub fn hand_masks_from_bodies(
    actor_body: ArrayView3<f64>,
    reactor_body: ArrayView3<f64>,
    skeleton: &Skeleton,
    threshold: f64,
) -> Result<HandInteractionMask> {
    if !(threshold > 0.0) {
        return Err(invalid(format!("mask threshold must be positive, got {threshold}")));
    }
    let (n, jb, _) = actor_body.dim();
    if reactor_body.dim() != actor_body.dim() || jb != skeleton.num_body_joints() {
        return Err(shape(format!(
            "body arrays {:?} / {:?} do not match {} body joints",
            actor_body.dim(),
            reactor_body.dim(),
            skeleton.num_body_joints()
        )));
    }
    let jh = skeleton.num_hand_joints();
    let mut actor = Array2::from_elem((n, jh), false);
    let mut reactor = Array2::from_elem((n, jh), false);
    for side in Side::BOTH {
        let w = skeleton
            .body_local(skeleton.wrist(side))
            .expect("wrist is a body joint");
        for f in 0..n {
            let a_active = min_dist(actor_body, f, w, reactor_body) < threshold;
            let r_active = min_dist(reactor_body, f, w, actor_body) < threshold;
            for h in skeleton.hand_range(side) {
                actor[[f, h]] = a_active;
                reactor[[f, h]] = r_active;
            }
        }
    }
    Ok(HandInteractionMask {
        actor,
        reactor,
        threshold,
    })
}

fn min_dist(from: ArrayView3<f64>, frame: usize, joint: usize, other: ArrayView3<f64>) -> f64 {
    let jb = other.dim().1;
    (0..jb)
        .map(|k| {
            let mut s = 0.0;
            for c in 0..3 {
                let d = from[[frame, joint, c]] - other[[frame, k, c]];
                s += d * d;
            }
            s.sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}
