//! Transformer-decoder denoisers for the body and hand stages.

mod attention;
mod embedding;
mod net;

use serde::{Deserialize, Serialize};

pub use attention::{cost_xa, h_xa, Attention};
pub use embedding::{sinusoidal, timestep_embedding};
pub use net::{stack_tokens, BatchNormBuffers, DenoiserNet, Forward, Mode, TokenMasks};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Body,
    Hands,
}

impl Stage {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "body" => Ok(Self::Body),
            "hands" => Ok(Self::Hands),
            _ => Err(invalid(format!("unknown stage `{s}` (expected body or hands)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Body => "body",
            Self::Hands => "hands",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub stage: Stage,
    pub latent_dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Joints of this stage (J_B or J_H).
    pub joints: usize,
    /// Window length N.
    pub window: usize,
    /// Diffusion steps T; timesteps range over `0..=T`.
    pub steps: usize,
    pub ffn_mult: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl DenoiserConfig {
    /// d = 32, L = 2, h = 2, T = 100.
    pub fn desk(stage: Stage, joints: usize, window: usize) -> Self {
        Self {
            stage,
            latent_dim: 32,
            layers: 2,
            heads: 2,
            joints,
            window,
            steps: 100,
            ffn_mult: 4,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    /// d = 256, L = 6, h = 4, T = 500.
    pub fn full_scale(stage: Stage, joints: usize, window: usize) -> Self {
        Self {
            latent_dim: 256,
            layers: 6,
            heads: 4,
            steps: 500,
            ..Self::desk(stage, joints, window)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.latent_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.latent_dim % self.heads != 0 {
            return Err(invalid(format!(
                "latent dim {} is not divisible by {} heads",
                self.latent_dim, self.heads
            )));
        }
        if self.layers == 0 {
            return Err(invalid("decoder needs at least one layer"));
        }
        if self.joints == 0 || self.window == 0 || self.steps == 0 || self.ffn_mult == 0 {
            return Err(invalid("joints, window, steps and ffn_mult must be positive"));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || !(self.bn_eps > 0.0) {
            return Err(invalid("bn_momentum must be in [0, 1] and bn_eps positive"));
        }
        Ok(())
    }
}
