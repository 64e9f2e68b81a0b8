//! Motion-conditioned reaction synthesis with a cascaded denoising
//! diffusion model: the reactor's body is denoised first, conditioned on
//! the actor's body, then the reactor's hands, conditioned on the actor's
//! hands and on hand-interaction masks derived from both bodies.

pub mod error;
pub mod motion;
pub mod denoiser;
pub mod diffusion;
pub mod losses;
pub mod metrics;
pub mod synth;
pub mod trainer;

pub use error::{CoreError, Result};
