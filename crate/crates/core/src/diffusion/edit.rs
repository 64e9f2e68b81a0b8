use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use super::schedule::DiffusionSchedule;
use crate::denoiser::Stage;
use crate::error::{invalid, shape, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditKind {
    /// Selected joints are controlled in every frame.
    PoseCompletion,
    /// Every joint is controlled at selected keyframes.
    InBetweening,
}

/// Entries of one cascade stage that are never denoised. `reference` is the
/// stage array (`N × J_stage × 3`) in normalized coordinates; only the
/// controlled entries are read.
#[derive(Debug, Clone, PartialEq)]
pub struct EditConstraint {
    pub kind: EditKind,
    pub stage: Stage,
    /// Stage-local joint indices (pose completion) or frame indices
    /// (in-betweening).
    pub indices: Vec<usize>,
    pub reference: Array3<f64>,
}

impl EditConstraint {
    pub fn new(kind: EditKind, stage: Stage, indices: Vec<usize>, reference: Array3<f64>) -> Result<Self> {
        let c = Self {
            kind,
            stage,
            indices,
            reference,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, j, d) = self.reference.dim();
        if d != 3 {
            return Err(shape("edit reference must be N x J x 3"));
        }
        let bound = match self.kind {
            EditKind::PoseCompletion => j,
            EditKind::InBetweening => n,
        };
        if let Some(i) = self.indices.iter().find(|&&i| i >= bound) {
            return Err(invalid(format!("edit index {i} out of range (< {bound})")));
        }
        if self.reference.iter().any(|v| !v.is_finite()) {
            return Err(invalid("edit reference contains non-finite values"));
        }
        Ok(())
    }

    pub fn controls(&self, frame: usize, joint: usize) -> bool {
        match self.kind {
            EditKind::PoseCompletion => self.indices.contains(&joint),
            EditKind::InBetweening => self.indices.contains(&frame),
        }
    }

    /// `(frame, joint)` pairs under control, frame-major.
    pub fn controlled_entries(&self) -> Vec<(usize, usize)> {
        let (n, j, _) = self.reference.dim();
        (0..n)
            .flat_map(|f| (0..j).map(move |k| (f, k)))
            .filter(|&(f, k)| self.controls(f, k))
            .collect()
    }
}

/// Overwrites the controlled entries of `x_t` with
/// `q_sample(reference, t, frozen_noise)`; at `t = 0` they become the
/// reference itself.
pub fn apply_edit_constraint(
    x_t: &mut Array3<f64>,
    constraint: &EditConstraint,
    t: usize,
    schedule: &DiffusionSchedule,
    frozen_noise: ArrayView3<f64>,
) -> Result<()> {
    constraint.validate()?;
    if x_t.dim() != constraint.reference.dim() || frozen_noise.dim() != x_t.dim() {
        return Err(shape(format!(
            "edit reference {:?}, sample {:?} and noise {:?} must match",
            constraint.reference.dim(),
            x_t.dim(),
            frozen_noise.dim()
        )));
    }
    if t > schedule.steps() {
        return Err(invalid(format!("timestep {t} outside [0, {}]", schedule.steps())));
    }
    let a = schedule.alpha_bar(t).sqrt();
    let s = (1.0 - schedule.alpha_bar(t)).sqrt();
    for (f, k) in constraint.controlled_entries() {
        for c in 0..3 {
            x_t[[f, k, c]] = if t == 0 {
                constraint.reference[[f, k, c]]
            } else {
                a * constraint.reference[[f, k, c]] + s * frozen_noise[[f, k, c]]
            };
        }
    }
    Ok(())
}
