//! Motion file format.
//!
//! A UTF-8 JSON document:
//!
//! ```text
//! { "fps": 20.0,
//!   "joint_names": ["pelvis", ...],
//!   "parent_index": [-1, 0, ...],
//!   "role": "actor" | "reactor",
//!   "positions": [[[x, y, z], ...joints], ...frames] }
//! ```
//!
//! Positions are meters, row-major frame → joint → xyz. Parent `-1` marks
//! the root.

use std::fs;
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::sequence::{MotionSequence, Role};
use super::skeleton::Skeleton;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionDocument {
    pub fps: f64,
    pub joint_names: Vec<String>,
    pub parent_index: Vec<i64>,
    pub role: Role,
    pub positions: Vec<Vec<[f64; 3]>>,
}

impl MotionDocument {
    pub fn from_sequence(seq: &MotionSequence, skeleton: &Skeleton) -> Self {
        let pos = seq.positions();
        let (n, j, _) = pos.dim();
        Self {
            fps: seq.fps(),
            joint_names: skeleton.joint_names().to_vec(),
            parent_index: skeleton
                .parents()
                .iter()
                .map(|p| p.map_or(-1, |p| p as i64))
                .collect(),
            role: seq.role(),
            positions: (0..n)
                .map(|f| {
                    (0..j)
                        .map(|k| [pos[[f, k, 0]], pos[[f, k, 1]], pos[[f, k, 2]]])
                        .collect()
                })
                .collect(),
        }
    }

    pub fn parents(&self) -> Vec<Option<usize>> {
        self.parent_index
            .iter()
            .map(|&p| usize::try_from(p).ok())
            .collect()
    }

    /// Validates the header against `skeleton` and builds the sequence.
    pub fn to_sequence(&self, skeleton: &Skeleton, path: &Path) -> Result<MotionSequence> {
        let schema = |message: String| CoreError::Schema {
            path: path.to_path_buf(),
            message,
        };
        if self.joint_names.len() != self.parent_index.len() {
            return Err(schema(format!(
                "{} joint names but {} parent indices",
                self.joint_names.len(),
                self.parent_index.len()
            )));
        }
        if self.joint_names != skeleton.joint_names() || self.parents() != skeleton.parents() {
            return Err(schema("skeleton mismatch: joint names or parents differ".into()));
        }
        let n = self.positions.len();
        if n < 2 {
            return Err(schema(format!("motion needs N >= 2 frames, got {n}")));
        }
        let j = self.joint_names.len();
        if let Some((f, row)) = self.positions.iter().enumerate().find(|(_, r)| r.len() != j) {
            return Err(schema(format!("frame {f} has {} joints, expected {j}", row.len())));
        }
        let flat: Vec<f64> = self.positions.iter().flatten().flatten().copied().collect();
        let arr = Array3::from_shape_vec((n, j, 3), flat).expect("checked dimensions");
        MotionSequence::new(self.fps, arr, self.role).map_err(|e| schema(e.to_string()))
    }
}

pub fn read_motion_document(path: &Path) -> Result<MotionDocument> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CoreError::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn load_motion(path: &Path, skeleton: &Skeleton) -> Result<MotionSequence> {
    read_motion_document(path)?.to_sequence(skeleton, path)
}

pub fn save_motion(seq: &MotionSequence, skeleton: &Skeleton, path: &Path) -> Result<()> {
    let doc = MotionDocument::from_sequence(seq, skeleton);
    let text = serde_json::to_string(&doc).map_err(|e| CoreError::Invalid(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}
