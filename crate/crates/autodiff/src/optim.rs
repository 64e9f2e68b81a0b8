//! Adam with a step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{AutodiffError, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Multiply the learning rate by `gamma` every `step_size` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLr {
    pub step_size: u64,
    pub gamma: f64,
}

impl Default for StepLr {
    fn default() -> Self {
        Self {
            step_size: 5,
            gamma: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub schedule: StepLr,
    state: OptimizerState,
}

impl Adam {
    pub fn new(config: AdamConfig, schedule: StepLr, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store
            .iter()
            .map(|(_, p)| vec![0.0; p.value.numel()])
            .collect();
        Self {
            config,
            schedule,
            state: OptimizerState {
                step: 0,
                epoch: 0,
                lr: config.lr,
                first_moment: zeros.clone(),
                second_moment: zeros,
            },
        }
    }

    pub fn from_state(config: AdamConfig, schedule: StepLr, state: OptimizerState) -> Self {
        Self {
            config,
            schedule,
            state,
        }
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn lr(&self) -> f64 {
        self.state.lr
    }

    /// Applies one update from the accumulated gradients, then clears them.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if !store.has_gradients() {
            return Err(AutodiffError::MissingGradients);
        }
        if store.len() != self.state.first_moment.len() {
            return Err(AutodiffError::Invalid(format!(
                "optimizer tracks {} parameters, store has {}",
                self.state.first_moment.len(),
                store.len()
            )));
        }
        self.state.step += 1;
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let t = self.state.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let lr = self.state.lr;
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            let Some(grad) = p.grad.as_ref() else {
                continue;
            };
            let m = &mut self.state.first_moment[i];
            let v = &mut self.state.second_moment[i];
            for (((w, &g), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        store.zero_grad();
        Ok(())
    }

    /// Marks the end of a training epoch and applies the step decay.
    pub fn end_epoch(&mut self) {
        self.state.epoch += 1;
        if self.schedule.step_size > 0 && self.state.epoch % self.schedule.step_size == 0 {
            self.state.lr *= self.schedule.gamma;
        }
    }
}
