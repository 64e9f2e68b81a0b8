//! Noise schedule, reverse sampling with clean-sample prediction, spatial
//! guidance and masked-denoising edits.

mod edit;
mod guidance;
mod sampler;
mod schedule;

pub use edit::{apply_edit_constraint, EditConstraint, EditKind};
pub use guidance::{
    apply_guidance, guidance_objective, masked_arm_residual, GuidanceConfig, GuidancePlacement,
};
pub use sampler::{
    sample_reactive, sample_stage, OracleDenoiser, ReactorSample, SampleRequest, SamplerConfig, StageInputs,
    StageTrace, X0Predictor,
};
pub use schedule::DiffusionSchedule;

/// Default number of diffusion steps.
pub const DEFAULT_STEPS: usize = 500;
pub const DEFAULT_BETA_START: f64 = 2e-4;
pub const DEFAULT_BETA_END: f64 = 2e-2;

/// `β` linear from `beta_start` to `beta_end` over `steps` steps.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> crate::Result<DiffusionSchedule> {
    DiffusionSchedule::linear(steps, beta_start, beta_end)
}
