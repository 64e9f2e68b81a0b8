use ndarray::{Array3, ArrayView3, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};

/// Noise schedule with per-step posterior terms. Index `t` runs over
/// `1..=T`; `alpha_bar(0)` is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    /// β linear in `t` from `beta_start` (t = 1) to `beta_end` (t = T).
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(invalid("schedule needs T >= 1"));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(invalid(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    /// Arbitrary β sequence with entries in `[0, 1)`. A zero β gives a
    /// step that does not change ᾱ.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(invalid("schedule needs T >= 1"));
        }
        if let Some(b) = betas.iter().find(|b| !(0.0..1.0).contains(*b)) {
            return Err(invalid(format!("beta {b} outside [0, 1)")));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(Self { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(invalid(format!("timestep {t} outside [0, {}]", self.steps())));
        }
        Ok(())
    }

    /// β_t for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta(t)
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// Coefficients of the posterior mean
    /// `μ̃ = c₀·x̂₀ + c_t·x_t`, for `t` in `1..=T`.
    pub fn posterior_coefficients(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar(t - 1);
        let b = self.beta(t);
        let denom = 1.0 - ab;
        if denom == 0.0 {
            // Degenerate schedule with no noise up to t: x_t already is x_0.
            return (0.0, 1.0);
        }
        (b * ab_prev.sqrt() / denom, (1.0 - ab_prev) * self.alpha(t).sqrt() / denom)
    }

    /// `β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t)`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        let denom = 1.0 - self.alpha_bar(t);
        if denom == 0.0 {
            return 0.0;
        }
        self.beta(t) * (1.0 - self.alpha_bar(t - 1)) / denom
    }

    /// `X_t = sqrt(ᾱ_t) X_0 + sqrt(1 − ᾱ_t) ε`.
    pub fn q_sample(&self, x0: ArrayView3<f64>, t: usize, eps: ArrayView3<f64>) -> Result<Array3<f64>> {
        self.check_t(t)?;
        if x0.dim() != eps.dim() {
            return Err(shape(format!("x0 {:?} and noise {:?} differ", x0.dim(), eps.dim())));
        }
        let a = self.alpha_bar(t).sqrt();
        let s = (1.0 - self.alpha_bar(t)).sqrt();
        Ok(Zip::from(&x0).and(&eps).map_collect(|&x, &e| a * x + s * e))
    }

    pub fn posterior_mean(&self, x_t: ArrayView3<f64>, x0_hat: ArrayView3<f64>, t: usize) -> Result<Array3<f64>> {
        if t == 0 {
            return Err(invalid("posterior step needs t >= 1"));
        }
        self.check_t(t)?;
        if x_t.dim() != x0_hat.dim() {
            return Err(shape(format!("x_t {:?} and x̂0 {:?} differ", x_t.dim(), x0_hat.dim())));
        }
        let (c0, ct) = self.posterior_coefficients(t);
        Ok(Zip::from(&x0_hat).and(&x_t).map_collect(|&x0, &xt| c0 * x0 + ct * xt))
    }

    /// One reverse step `x_{t−1} = μ̃(x_t, x̂₀) + σ_t·noise`. At `t = 1`, or
    /// without noise, the posterior mean is returned.
    pub fn posterior_step(
        &self,
        x_t: ArrayView3<f64>,
        x0_hat: ArrayView3<f64>,
        t: usize,
        noise: Option<ArrayView3<f64>>,
    ) -> Result<Array3<f64>> {
        let mut mean = self.posterior_mean(x_t, x0_hat, t)?;
        if let (Some(z), true) = (noise, t > 1) {
            if z.dim() != mean.dim() {
                return Err(shape(format!("noise {:?} does not match {:?}", z.dim(), mean.dim())));
            }
            let sigma = self.posterior_variance(t).sqrt();
            Zip::from(&mut mean).and(&z).for_each(|m, &e| *m += sigma * e);
        }
        Ok(mean)
    }
}
