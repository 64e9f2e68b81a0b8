//! Actor-root centering and wrist-relative hand coordinates.
//!
//! Body joints of both characters are translated so the actor root sits at
//! the origin in every frame. Hand joints are expressed relative to the
//! owning character's wrist on the same side. The transform is translation
//! only, so distances between body joints are unchanged.

use ndarray::{Array2, Array3, ArrayView3};

use super::sequence::{InteractionPair, MotionSequence};
use super::skeleton::{Side, Skeleton};
use crate::error::{shape, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationTransform {
    /// Actor root position per frame, `N × 3`.
    pub actor_root: Array2<f64>,
    /// World wrist positions per frame and side (left, right), `N × 2 × 3`.
    pub actor_wrists: Array3<f64>,
    pub reactor_wrists: Array3<f64>,
}

impl NormalizationTransform {
    pub fn num_frames(&self) -> usize {
        self.actor_root.dim().0
    }
}

fn wrists(pos: &Array3<f64>, skeleton: &Skeleton) -> Array3<f64> {
    let n = pos.dim().0;
    let mut out = Array3::zeros((n, 2, 3));
    for f in 0..n {
        for side in Side::BOTH {
            let w = skeleton.wrist(side);
            for c in 0..3 {
                out[[f, side.index(), c]] = pos[[f, w, c]];
            }
        }
    }
    out
}

fn to_local(pos: &Array3<f64>, skeleton: &Skeleton, root: &Array2<f64>, own_wrists: &Array3<f64>) -> Array3<f64> {
    let mut out = pos.clone();
    let n = pos.dim().0;
    for f in 0..n {
        for &j in skeleton.body_joints() {
            for c in 0..3 {
                out[[f, j, c]] = pos[[f, j, c]] - root[[f, c]];
            }
        }
        for side in Side::BOTH {
            for &j in skeleton.hand_joints_of(side) {
                for c in 0..3 {
                    out[[f, j, c]] = pos[[f, j, c]] - own_wrists[[f, side.index(), c]];
                }
            }
        }
    }
    out
}

/// Normalizes a world-space pair; see the module docs.
pub fn normalize_pair(pair: &InteractionPair) -> Result<(InteractionPair, NormalizationTransform)> {
    let skeleton = pair.skeleton();
    let actor = pair.actor().positions();
    let reactor = pair.reactor().positions();
    let n = pair.num_frames();
    let root_idx = skeleton.root();
    let mut actor_root = Array2::zeros((n, 3));
    for f in 0..n {
        for c in 0..3 {
            actor_root[[f, c]] = actor[[f, root_idx, c]];
        }
    }
    let transform = NormalizationTransform {
        actor_wrists: wrists(actor, skeleton),
        reactor_wrists: wrists(reactor, skeleton),
        actor_root,
    };
    let a = to_local(actor, skeleton, &transform.actor_root, &transform.actor_wrists);
    let r = to_local(reactor, skeleton, &transform.actor_root, &transform.reactor_wrists);
    let normalized = InteractionPair::new(
        MotionSequence::new(pair.fps(), a, pair.actor().role())?,
        MotionSequence::new(pair.fps(), r, pair.reactor().role())?,
        pair.skeleton_arc().clone(),
    )?;
    Ok((normalized, transform))
}

fn from_local(pos: &Array3<f64>, skeleton: &Skeleton, root: &Array2<f64>, own_wrists: &Array3<f64>) -> Array3<f64> {
    let mut out = pos.clone();
    for f in 0..pos.dim().0 {
        for &j in skeleton.body_joints() {
            for c in 0..3 {
                out[[f, j, c]] = pos[[f, j, c]] + root[[f, c]];
            }
        }
        for side in Side::BOTH {
            for &j in skeleton.hand_joints_of(side) {
                for c in 0..3 {
                    out[[f, j, c]] = pos[[f, j, c]] + own_wrists[[f, side.index(), c]];
                }
            }
        }
    }
    out
}

/// Exact inverse of [`normalize_pair`].
pub fn denormalize_pair(pair: &InteractionPair, transform: &NormalizationTransform) -> Result<InteractionPair> {
    check_frames(pair.num_frames(), transform)?;
    let skeleton = pair.skeleton();
    let a = from_local(pair.actor().positions(), skeleton, &transform.actor_root, &transform.actor_wrists);
    let r = from_local(pair.reactor().positions(), skeleton, &transform.actor_root, &transform.reactor_wrists);
    InteractionPair::new(
        MotionSequence::new(pair.fps(), a, pair.actor().role())?,
        MotionSequence::new(pair.fps(), r, pair.reactor().role())?,
        pair.skeleton_arc().clone(),
    )
}

/// Maps a synthesized normalized reactor (`N × J × 3`) back to world space.
/// Hands are re-attached to the reactor's own synthesized wrists rather than
/// the stored ground-truth wrists.
pub fn denormalize_reactor(
    normalized: ArrayView3<f64>,
    skeleton: &Skeleton,
    transform: &NormalizationTransform,
) -> Result<Array3<f64>> {
    check_frames(normalized.dim().0, transform)?;
    let pos = normalized.to_owned();
    let n = pos.dim().0;
    let mut synthesized_wrists = Array3::zeros((n, 2, 3));
    for f in 0..n {
        for side in Side::BOTH {
            let w = skeleton.wrist(side);
            for c in 0..3 {
                synthesized_wrists[[f, side.index(), c]] = pos[[f, w, c]] + transform.actor_root[[f, c]];
            }
        }
    }
    Ok(from_local(&pos, skeleton, &transform.actor_root, &synthesized_wrists))
}

fn check_frames(n: usize, t: &NormalizationTransform) -> Result<()> {
    if n != t.num_frames() {
        return Err(shape(format!(
            "transform covers {} frames, motion has {n}",
            t.num_frames()
        )));
    }
    Ok(())
}
