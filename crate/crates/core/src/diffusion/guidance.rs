use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::motion::{HandInteractionMask, Side, Skeleton};

/// Where the guidance step is applied within a reverse step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidancePlacement {
    /// On the predicted clean body before the posterior step.
    BeforePosterior,
    /// On `x_{t−1}` after the posterior step.
    AfterPosterior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub scale: f64,
    pub enabled: bool,
    /// Shoulder, elbow and wrist per side (left, right), as indices into
    /// the body-joint array.
    pub arm_joints: [[usize; 3]; 2],
    pub placement: GuidancePlacement,
}

impl GuidanceConfig {
    /// Arm chains of `skeleton`, scale 1e-3, enabled.
    pub fn for_skeleton(skeleton: &Skeleton) -> Self {
        let local = |side| {
            skeleton
                .arm_chain(side)
                .map(|j| skeleton.body_local(j).expect("arm joints are body joints"))
        };
        Self {
            scale: 1e-3,
            enabled: true,
            arm_joints: [local(Side::Left), local(Side::Right)],
            placement: GuidancePlacement::BeforePosterior,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(invalid(format!("guidance scale must be >= 0, got {}", self.scale)));
        }
        Ok(())
    }
}

/// Per-frame, per-side activity of the actor and reactor hands, reduced
/// over each hand's joints.
fn side_masks(masks: &HandInteractionMask, skeleton: &Skeleton, frame: usize) -> [(f64, f64); 2] {
    Side::BOTH.map(|s| {
        (
            f64::from(u8::from(masks.actor_side(skeleton, frame, s))),
            f64::from(u8::from(masks.reactor_side(skeleton, frame, s))),
        )
    })
}

fn check(x0: &ArrayView3<f64>, actor: &ArrayView3<f64>, masks: &HandInteractionMask, cfg: &GuidanceConfig) -> Result<()> {
    if x0.dim() != actor.dim() {
        return Err(shape(format!("reactor {:?} and actor {:?} bodies differ", x0.dim(), actor.dim())));
    }
    if masks.num_frames() != x0.dim().0 {
        return Err(shape("mask frame count differs from the motion"));
    }
    if cfg.arm_joints.iter().flatten().any(|&j| j >= x0.dim().1) {
        return Err(invalid("arm joint index out of range"));
    }
    Ok(())
}

/// `G = Σ ‖M_A ⊙ φ − M_R ⊙ φ̂‖²` over the arm joints, where φ are the
/// actor's arm joints and φ̂ the reactor's (same side).
pub fn guidance_objective(
    x0: ArrayView3<f64>,
    actor: ArrayView3<f64>,
    masks: &HandInteractionMask,
    skeleton: &Skeleton,
    cfg: &GuidanceConfig,
) -> Result<f64> {
    check(&x0, &actor, masks, cfg)?;
    Ok(accumulate(&x0, &actor, masks, skeleton, cfg, false))
}

/// The part of the residual that guidance can move: `Σ ‖M_R ⊙ (M_A ⊙ φ −
/// M_R ⊙ φ̂)‖²`. One guidance step scales it by exactly `(1 − 2γ)²`.
pub fn masked_arm_residual(
    x0: ArrayView3<f64>,
    actor: ArrayView3<f64>,
    masks: &HandInteractionMask,
    skeleton: &Skeleton,
    cfg: &GuidanceConfig,
) -> Result<f64> {
    check(&x0, &actor, masks, cfg)?;
    Ok(accumulate(&x0, &actor, masks, skeleton, cfg, true))
}

fn accumulate(
    x0: &ArrayView3<f64>,
    actor: &ArrayView3<f64>,
    masks: &HandInteractionMask,
    skeleton: &Skeleton,
    cfg: &GuidanceConfig,
    reactor_only: bool,
) -> f64 {
    let mut total = 0.0;
    for n in 0..x0.dim().0 {
        for (side, (ma, mr)) in side_masks(masks, skeleton, n).into_iter().enumerate() {
            if reactor_only && mr == 0.0 {
                continue;
            }
            for &j in &cfg.arm_joints[side] {
                for c in 0..3 {
                    let r = ma * actor[[n, j, c]] - mr * x0[[n, j, c]];
                    total += r * r;
                }
            }
        }
    }
    total
}

/// One explicit gradient step `φ̂ ← φ̂ − γ ∇_φ̂ G` on the reactor's arm
/// joints; `∇_φ̂ G = −2 M_R ⊙ (M_A ⊙ φ − M_R ⊙ φ̂)`. Other joints are copied
/// unchanged.
pub fn apply_guidance(
    x0: ArrayView3<f64>,
    actor: ArrayView3<f64>,
    masks: &HandInteractionMask,
    skeleton: &Skeleton,
    cfg: &GuidanceConfig,
) -> Result<Array3<f64>> {
    cfg.validate()?;
    check(&x0, &actor, masks, cfg)?;
    let mut out = x0.to_owned();
    if !cfg.enabled || cfg.scale == 0.0 {
        return Ok(out);
    }
    let g = cfg.scale;
    for n in 0..x0.dim().0 {
        for (side, (ma, mr)) in side_masks(masks, skeleton, n).into_iter().enumerate() {
            if mr == 0.0 {
                continue;
            }
            for &j in &cfg.arm_joints[side] {
                for c in 0..3 {
                    let r = ma * actor[[n, j, c]] - mr * x0[[n, j, c]];
                    out[[n, j, c]] = x0[[n, j, c]] + 2.0 * g * mr * r;
                }
            }
        }
    }
    Ok(out)
}
