use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use ndarray::{Array2, ArrayView3};

use super::sequence::MotionSequence;
use super::skeleton::Skeleton;
use crate::error::{invalid, shape, Result};

/// Tolerance on `|‖q‖ − 1|` accepted by [`forward_kinematics`].
pub const UNIT_QUATERNION_TOL: f64 = 1e-9;

/// Per-frame joint-to-parent distance for every non-root joint, in joint
/// order (`N × (J − 1)`).
pub fn bone_lengths(seq: &MotionSequence, skeleton: &Skeleton) -> Result<Array2<f64>> {
    if seq.num_joints() != skeleton.num_joints() {
        return Err(shape(format!(
            "motion has {} joints, skeleton {}",
            seq.num_joints(),
            skeleton.num_joints()
        )));
    }
    Ok(bone_lengths_of(seq.positions().view(), skeleton))
}

fn bone_lengths_of(pos: ArrayView3<f64>, skeleton: &Skeleton) -> Array2<f64> {
    let bones: Vec<(usize, usize)> = skeleton
        .parents()
        .iter()
        .enumerate()
        .filter_map(|(j, p)| p.map(|p| (j, p)))
        .collect();
    let n = pos.dim().0;
    Array2::from_shape_fn((n, bones.len()), |(f, b)| {
        let (j, p) = bones[b];
        let mut s = 0.0;
        for c in 0..3 {
            let d = pos[[f, j, c]] - pos[[f, p, c]];
            s += d * d;
        }
        s.sqrt()
    })
}

/// Joint positions (`J × 3`) from a root translation and per-joint local
/// rotations.
///
/// The root lands at `root_translation + rest_offset(root)`; every other
/// joint at `parent + R_parent · rest_offset`, where `R_parent` composes the
/// local rotations from the root down to the parent.
pub fn forward_kinematics(
    root_translation: Vector3<f64>,
    local_rotations: &[Quaternion<f64>],
    skeleton: &Skeleton,
) -> Result<Array2<f64>> {
    let n = skeleton.num_joints();
    if local_rotations.len() != n {
        return Err(shape(format!(
            "expected {n} rotations, got {}",
            local_rotations.len()
        )));
    }
    for (j, q) in local_rotations.iter().enumerate() {
        if (q.norm() - 1.0).abs() > UNIT_QUATERNION_TOL {
            return Err(invalid(format!(
                "rotation of joint `{}` is not normalized (|q| = {})",
                skeleton.joint_names()[j],
                q.norm()
            )));
        }
    }
    let mut global = vec![UnitQuaternion::identity(); n];
    let mut pos = vec![Vector3::zeros(); n];
    for &j in skeleton.topo_order() {
        let local = UnitQuaternion::new_unchecked(local_rotations[j]);
        let offset = Vector3::from(skeleton.rest_offsets()[j]);
        match skeleton.parents()[j] {
            None => {
                pos[j] = root_translation + offset;
                global[j] = local;
            }
            Some(p) => {
                pos[j] = pos[p] + global[p] * offset;
                global[j] = global[p] * local;
            }
        }
    }
    Ok(Array2::from_shape_fn((n, 3), |(j, c)| pos[j][c]))
}
