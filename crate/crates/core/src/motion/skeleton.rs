//! Joint hierarchy shared by actor and reactor.
//!
//! Coordinates are meters, y up; the rest pose faces +z with the character's
//! left side on +x.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkeletonPreset {
    /// 11 body joints, 2 finger joints per hand.
    Mini,
    /// 27 body joints, 11 finger joints per hand.
    Full,
}

impl SkeletonPreset {
    pub fn build(self) -> Skeleton {
        match self {
            SkeletonPreset::Mini => mini(),
            SkeletonPreset::Full => full(),
        }
        .expect("preset skeletons are valid")
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "mini" => Ok(SkeletonPreset::Mini),
            "full" => Ok(SkeletonPreset::Full),
            other => Err(invalid(format!("unknown skeleton preset `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SkeletonPreset::Mini => "mini",
            SkeletonPreset::Full => "full",
        }
    }

    /// The preset whose joint names and parents match exactly.
    pub fn detect(names: &[String], parents: &[Option<usize>]) -> Option<Self> {
        [SkeletonPreset::Mini, SkeletonPreset::Full]
            .into_iter()
            .find(|p| {
                let s = p.build();
                s.joint_names() == names && s.parents() == parents
            })
    }
}

/// Raw joint table for [`Skeleton::new`].
#[derive(Debug, Clone)]
pub struct JointSpec {
    pub name: &'static str,
    pub parent: Option<usize>,
    /// Rest offset from the parent (from the origin for the root).
    pub offset: [f64; 3],
    pub hand: Option<Side>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    joint_names: Vec<String>,
    parents: Vec<Option<usize>>,
    rest_offsets: Vec<[f64; 3]>,
    body_joints: Vec<usize>,
    hand_joints: [Vec<usize>; 2],
    wrists: [usize; 2],
    arm_chains: [[usize; 3]; 2],
    foot_joints: Vec<usize>,
    mirror: Vec<usize>,
    topo_order: Vec<usize>,
}

impl Skeleton {
    /// Validates the joint table. Arm chains and feet are given by name;
    /// left/right mirror pairs are inferred from `l_`/`r_` prefixes.
    pub fn new(
        joints: &[JointSpec],
        arm_chains: [[&str; 3]; 2],
        feet: &[&str],
    ) -> Result<Self> {
        let n = joints.len();
        if n == 0 {
            return Err(invalid("skeleton has no joints"));
        }
        let joint_names: Vec<String> = joints.iter().map(|j| j.name.to_string()).collect();
        let find = |name: &str| {
            joint_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| invalid(format!("unknown joint `{name}`")))
        };
        let parents: Vec<Option<usize>> = joints.iter().map(|j| j.parent).collect();
        let roots = parents.iter().filter(|p| p.is_none()).count();
        if roots != 1 {
            return Err(invalid(format!("skeleton needs exactly one root, found {roots}")));
        }
        for (j, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                if p >= n || p == j {
                    return Err(invalid(format!("joint {j} has invalid parent {p}")));
                }
            }
        }
        // Every ancestor walk must reach the root within n steps.
        for j in 0..n {
            let mut cur = j;
            let mut steps = 0;
            while let Some(p) = parents[cur] {
                cur = p;
                steps += 1;
                if steps > n {
                    return Err(invalid(format!("joint {j} is part of a cycle")));
                }
            }
        }
        let mut topo_order = Vec::with_capacity(n);
        let mut placed = vec![false; n];
        while topo_order.len() < n {
            for j in 0..n {
                if !placed[j] && parents[j].is_none_or(|p| placed[p]) {
                    placed[j] = true;
                    topo_order.push(j);
                }
            }
        }

        let wrists = [find(arm_chains[0][2])?, find(arm_chains[1][2])?];
        let chains = [
            [find(arm_chains[0][0])?, find(arm_chains[0][1])?, wrists[0]],
            [find(arm_chains[1][0])?, find(arm_chains[1][1])?, wrists[1]],
        ];
        let mut body_joints = Vec::new();
        let mut hand_joints = [Vec::new(), Vec::new()];
        for (j, spec) in joints.iter().enumerate() {
            match spec.hand {
                None => body_joints.push(j),
                Some(side) => {
                    let wrist = wrists[side.index()];
                    let mut cur = j;
                    let mut found = false;
                    while let Some(p) = parents[cur] {
                        if p == wrist {
                            found = true;
                            break;
                        }
                        cur = p;
                    }
                    if !found {
                        return Err(invalid(format!(
                            "hand joint `{}` does not descend from its wrist",
                            spec.name
                        )));
                    }
                    hand_joints[side.index()].push(j);
                }
            }
        }
        for w in wrists {
            if joints[w].hand.is_some() {
                return Err(invalid("wrists must be body joints"));
            }
        }
        for (j, spec) in joints.iter().enumerate() {
            if spec.parent.is_some() {
                let len = norm(spec.offset);
                if len.is_nan() || len <= 0.0 {
                    return Err(invalid(format!("joint `{}` has zero rest length", joint_names[j])));
                }
            }
        }
        let foot_joints = feet.iter().map(|f| find(f)).collect::<Result<Vec<_>>>()?;
        let mirror = joint_names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let swapped = if let Some(rest) = name.strip_prefix("l_") {
                    format!("r_{rest}")
                } else if let Some(rest) = name.strip_prefix("r_") {
                    format!("l_{rest}")
                } else {
                    return Ok(j);
                };
                find(&swapped)
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(Self {
            joint_names,
            parents,
            rest_offsets: joints.iter().map(|j| j.offset).collect(),
            body_joints,
            hand_joints,
            wrists,
            arm_chains: chains,
            foot_joints,
            mirror,
            topo_order,
        })
    }

    pub fn num_joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn root(&self) -> usize {
        self.topo_order[0]
    }

    /// Joints ordered so that every parent precedes its children.
    pub fn topo_order(&self) -> &[usize] {
        &self.topo_order
    }

    pub fn rest_offsets(&self) -> &[[f64; 3]] {
        &self.rest_offsets
    }

    /// Indices of the J_B body joints, ascending.
    pub fn body_joints(&self) -> &[usize] {
        &self.body_joints
    }

    /// Indices of the J_H finger joints: left hand first, then right.
    pub fn hand_joints(&self) -> Vec<usize> {
        let mut v = self.hand_joints[0].clone();
        v.extend(&self.hand_joints[1]);
        v
    }

    pub fn hand_joints_of(&self, side: Side) -> &[usize] {
        &self.hand_joints[side.index()]
    }

    pub fn num_body_joints(&self) -> usize {
        self.body_joints.len()
    }

    pub fn num_hand_joints(&self) -> usize {
        self.hand_joints[0].len() + self.hand_joints[1].len()
    }

    /// Range of `side`'s joints within the concatenated hand joint list.
    pub fn hand_range(&self, side: Side) -> std::ops::Range<usize> {
        let left = self.hand_joints[0].len();
        match side {
            Side::Left => 0..left,
            Side::Right => left..left + self.hand_joints[1].len(),
        }
    }

    pub fn wrist(&self, side: Side) -> usize {
        self.wrists[side.index()]
    }

    /// Shoulder, elbow, wrist.
    pub fn arm_chain(&self, side: Side) -> [usize; 3] {
        self.arm_chains[side.index()]
    }

    pub fn foot_joints(&self) -> &[usize] {
        &self.foot_joints
    }

    /// Left/right counterpart of each joint (itself for midline joints).
    pub fn mirror_map(&self) -> &[usize] {
        &self.mirror
    }

    /// Position of global joint `j` within [`Skeleton::body_joints`].
    pub fn body_local(&self, j: usize) -> Option<usize> {
        self.body_joints.iter().position(|&b| b == j)
    }

    /// Position of global joint `j` within [`Skeleton::hand_joints`].
    pub fn hand_local(&self, j: usize) -> Option<usize> {
        self.hand_joints().iter().position(|&h| h == j)
    }

    /// Side owning hand joint `j`.
    pub fn hand_side(&self, j: usize) -> Option<Side> {
        Side::BOTH
            .into_iter()
            .find(|s| self.hand_joints[s.index()].contains(&j))
    }

    /// Rest length of the bone ending at each non-root joint, in joint order.
    pub fn rest_bone_lengths(&self) -> Vec<f64> {
        (0..self.num_joints())
            .filter(|&j| self.parents[j].is_some())
            .map(|j| norm(self.rest_offsets[j]))
            .collect()
    }

    /// Rest pose joint positions (J × 3).
    pub fn rest_positions(&self) -> Vec<[f64; 3]> {
        let mut pos = vec![[0.0; 3]; self.num_joints()];
        for &j in &self.topo_order {
            let base = self.parents[j].map(|p| pos[p]).unwrap_or([0.0; 3]);
            let o = self.rest_offsets[j];
            pos[j] = [base[0] + o[0], base[1] + o[1], base[2] + o[2]];
        }
        pos
    }

    /// Bones (child, parent) restricted to a joint subset, in subset-local
    /// indices. A parent outside the subset that is one of `anchors` maps to
    /// `None` (the bone runs to the local origin); other bones are dropped.
    pub fn local_bones(&self, subset: &[usize], anchors: &[usize]) -> Vec<(usize, Option<usize>)> {
        subset
            .iter()
            .enumerate()
            .filter_map(|(local, &j)| {
                let p = self.parents[j]?;
                if let Some(pl) = subset.iter().position(|&s| s == p) {
                    Some((local, Some(pl)))
                } else if anchors.contains(&p) {
                    Some((local, None))
                } else {
                    None
                }
            })
            .collect()
    }
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn body(name: &'static str, parent: Option<usize>, offset: [f64; 3]) -> JointSpec {
    JointSpec {
        name,
        parent,
        offset,
        hand: None,
    }
}

fn finger(name: &'static str, parent: usize, offset: [f64; 3], side: Side) -> JointSpec {
    JointSpec {
        name,
        parent: Some(parent),
        offset,
        hand: Some(side),
    }
}

fn mirror_x(o: [f64; 3]) -> [f64; 3] {
    [-o[0], o[1], o[2]]
}

fn mini() -> Result<Skeleton> {
    let mut j = vec![
        body("pelvis", None, [0.0, 0.95, 0.0]),
        body("spine", Some(0), [0.0, 0.25, 0.0]),
        body("neck", Some(1), [0.0, 0.25, 0.0]),
        body("l_shoulder", Some(2), [0.18, -0.03, 0.0]),
        body("l_elbow", Some(3), [0.0, -0.30, 0.0]),
        body("l_wrist", Some(4), [0.0, -0.28, 0.0]),
        body("r_shoulder", Some(2), [-0.18, -0.03, 0.0]),
        body("r_elbow", Some(6), [0.0, -0.30, 0.0]),
        body("r_wrist", Some(7), [0.0, -0.28, 0.0]),
        body("l_ankle", Some(0), [0.10, -0.88, 0.0]),
        body("r_ankle", Some(0), [-0.10, -0.88, 0.0]),
    ];
    let index = [0.0, -0.10, 0.02];
    let thumb = [0.0, -0.05, 0.04];
    j.push(finger("l_index", 5, index, Side::Left));
    j.push(finger("l_thumb", 5, thumb, Side::Left));
    j.push(finger("r_index", 8, mirror_x(index), Side::Right));
    j.push(finger("r_thumb", 8, mirror_x(thumb), Side::Right));
    Skeleton::new(
        &j,
        [
            ["l_shoulder", "l_elbow", "l_wrist"],
            ["r_shoulder", "r_elbow", "r_wrist"],
        ],
        &["l_ankle", "r_ankle"],
    )
}

fn full() -> Result<Skeleton> {
    let mut j = vec![
        body("pelvis", None, [0.0, 0.95, 0.0]),
        body("spine1", Some(0), [0.0, 0.10, 0.0]),
        body("spine2", Some(1), [0.0, 0.12, 0.0]),
        body("spine3", Some(2), [0.0, 0.12, 0.0]),
        body("neck", Some(3), [0.0, 0.15, 0.0]),
        body("head", Some(4), [0.0, 0.10, 0.0]),
        body("head_top", Some(5), [0.0, 0.12, 0.0]),
        body("l_ear", Some(5), [0.08, 0.02, 0.0]),
        body("r_ear", Some(5), [-0.08, 0.02, 0.0]),
        body("l_collar", Some(3), [0.06, 0.10, 0.0]),
        body("l_shoulder", Some(9), [0.12, 0.0, 0.0]),
        body("l_elbow", Some(10), [0.0, -0.29, 0.0]),
        body("l_wrist", Some(11), [0.0, -0.26, 0.0]),
        body("r_collar", Some(3), [-0.06, 0.10, 0.0]),
        body("r_shoulder", Some(13), [-0.12, 0.0, 0.0]),
        body("r_elbow", Some(14), [0.0, -0.29, 0.0]),
        body("r_wrist", Some(15), [0.0, -0.26, 0.0]),
        body("l_hip", Some(0), [0.09, -0.05, 0.0]),
        body("l_knee", Some(17), [0.0, -0.42, 0.0]),
        body("l_ankle", Some(18), [0.0, -0.40, 0.0]),
        body("l_toe", Some(19), [0.0, -0.06, 0.12]),
        body("l_heel", Some(19), [0.0, -0.06, -0.05]),
        body("r_hip", Some(0), [-0.09, -0.05, 0.0]),
        body("r_knee", Some(22), [0.0, -0.42, 0.0]),
        body("r_ankle", Some(23), [0.0, -0.40, 0.0]),
        body("r_toe", Some(24), [0.0, -0.06, 0.12]),
        body("r_heel", Some(24), [0.0, -0.06, -0.05]),
    ];
    const FINGERS: [(&str, &str, [f64; 3], [f64; 3]); 5] = [
        ("l_thumb1", "l_thumb2", [0.01, -0.02, 0.03], [0.0, -0.03, 0.02]),
        ("l_index1", "l_index2", [0.0, -0.05, 0.02], [0.0, -0.04, 0.0]),
        ("l_middle1", "l_middle2", [0.0, -0.055, 0.0], [0.0, -0.04, 0.0]),
        ("l_ring1", "l_ring2", [0.0, -0.05, -0.015], [0.0, -0.035, 0.0]),
        ("l_pinky1", "l_pinky2", [0.0, -0.045, -0.03], [0.0, -0.03, 0.0]),
    ];
    const RIGHT: [(&str, &str); 5] = [
        ("r_thumb1", "r_thumb2"),
        ("r_index1", "r_index2"),
        ("r_middle1", "r_middle2"),
        ("r_ring1", "r_ring2"),
        ("r_pinky1", "r_pinky2"),
    ];
    for (side, wrist, palm) in [(Side::Left, 12, "l_palm"), (Side::Right, 16, "r_palm")] {
        let flip = |o: [f64; 3]| if side == Side::Left { o } else { mirror_x(o) };
        let palm_idx = j.len();
        j.push(finger(palm, wrist, [0.0, -0.05, 0.0], side));
        for (k, (base, tip, ob, ot)) in FINGERS.iter().enumerate() {
            let (base, tip) = if side == Side::Left {
                (*base, *tip)
            } else {
                RIGHT[k]
            };
            let base_idx = j.len();
            j.push(finger(base, palm_idx, flip(*ob), side));
            j.push(finger(tip, base_idx, flip(*ot), side));
        }
    }
    Skeleton::new(
        &j,
        [
            ["l_shoulder", "l_elbow", "l_wrist"],
            ["r_shoulder", "r_elbow", "r_wrist"],
        ],
        &["l_ankle", "l_toe", "r_ankle", "r_toe"],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_joint_counts() {
        let mini = SkeletonPreset::Mini.build();
        assert_eq!(mini.num_body_joints(), 11);
        assert_eq!(mini.num_hand_joints(), 4);
        let full = SkeletonPreset::Full.build();
        assert_eq!(full.num_body_joints(), 27);
        assert_eq!(full.num_hand_joints(), 22);
    }

    #[test]
    fn body_and_hand_sets_partition_joints() {
        for preset in [SkeletonPreset::Mini, SkeletonPreset::Full] {
            let s = preset.build();
            let mut all: Vec<usize> = s.body_joints().to_vec();
            all.extend(s.hand_joints());
            all.sort_unstable();
            assert_eq!(all, (0..s.num_joints()).collect::<Vec<_>>());
            assert!(s.rest_bone_lengths().iter().all(|&l| l > 0.0));
        }
    }

    #[test]
    fn mirror_is_an_involution() {
        let s = SkeletonPreset::Full.build();
        let m = s.mirror_map();
        for j in 0..s.num_joints() {
            assert_eq!(m[m[j]], j);
        }
        assert_eq!(m[s.wrist(Side::Left)], s.wrist(Side::Right));
    }

    #[test]
    fn rejects_cycles_and_orphans() {
        let joints = vec![
            body("a", None, [0.0; 3]),
            body("b", Some(2), [0.0, 1.0, 0.0]),
            body("c", Some(1), [0.0, 1.0, 0.0]),
        ];
        assert!(Skeleton::new(&joints, [["a", "b", "c"], ["a", "b", "c"]], &[]).is_err());
        let joints = vec![
            body("a", None, [0.0; 3]),
            body("b", Some(0), [0.0, 0.0, 0.0]),
        ];
        assert!(Skeleton::new(&joints, [["a", "a", "b"], ["a", "a", "b"]], &[]).is_err());
    }

    #[test]
    fn hand_joint_must_descend_from_wrist() {
        let joints = vec![
            body("root", None, [0.0; 3]),
            body("l_wrist", Some(0), [0.1, 0.0, 0.0]),
            body("r_wrist", Some(0), [-0.1, 0.0, 0.0]),
            finger("l_tip", 0, [0.0, 0.1, 0.0], Side::Left),
        ];
        let err = Skeleton::new(
            &joints,
            [["root", "root", "l_wrist"], ["root", "root", "r_wrist"]],
            &[],
        );
        assert!(err.is_err());
    }

    #[test]
    fn detect_preset_from_header() {
        let s = SkeletonPreset::Mini.build();
        assert_eq!(
            SkeletonPreset::detect(s.joint_names(), s.parents()),
            Some(SkeletonPreset::Mini)
        );
    }
}
