//! Stage-wise training loop, checkpoints and evaluation helpers.
//!
//! One epoch is one pass over the training windows in a seeded random
//! order. The randomness of step `k` (timesteps and noise) comes from its
//! own stream, so a run resumed from a checkpoint continues exactly as an
//! uninterrupted one.

mod checkpoint;
mod data;
mod eval;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use remos_autodiff::{Adam, AdamConfig, Graph, StepLr, Tensor};
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use data::{ground_truth_masks, synthesized_masks, StageData};
pub use eval::{mean_body_baseline, mean_mpjpe, sample_body_windows};

use crate::denoiser::{DenoiserConfig, DenoiserNet, Mode, Stage};
use crate::diffusion::{make_schedule, DiffusionSchedule};
use crate::error::{invalid, CoreError, Result};
use crate::losses::{
    acceleration_loss, bone_loss, foot_loss, reaction_loss, recon_loss, total_loss, velocity_loss, LossTerms,
    LossValues, LossWeights, ReconNorm,
};
use crate::motion::DEFAULT_MASK_THRESHOLD;

/// Source of the reactor hand masks used while training the hand stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPolicy {
    /// Masks from the ground-truth reactor body.
    GroundTruth,
    /// Masks from a body sampled by a frozen body checkpoint.
    Synthesized,
}

/// Which motion the foot-contact indicator of the foot loss is read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactSource {
    GroundTruth,
    /// Detected on the predicted clean motion at every step.
    Synthesized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub denoiser: DenoiserConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops early once this many optimizer steps have been taken.
    pub max_steps: Option<u64>,
    pub weights: LossWeights,
    pub recon_norm: ReconNorm,
    pub adam: AdamConfig,
    pub lr_schedule: StepLr,
    pub seed: u64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub mask_policy: MaskPolicy,
    /// Body checkpoint for [`MaskPolicy::Synthesized`].
    pub body_checkpoint: Option<String>,
    pub contact_source: ContactSource,
    pub mask_threshold: f64,
}

/// Learning rate of the desk configuration. The small networks and short
/// runs need a larger step than the full-scale rate.
pub const DESK_LEARNING_RATE: f64 = 1e-3;
/// β range of the desk schedule. With T = 100 the full-scale range would
/// leave ᾱ_T near 0.36, far from pure noise; scaling both ends by 500/T
/// brings ᾱ_T back below 0.01.
pub const DESK_BETA_START: f64 = 1e-3;
pub const DESK_BETA_END: f64 = 0.1;

impl TrainConfig {
    /// Desk-scale defaults for a stage with `joints` joints per frame.
    pub fn desk(stage: Stage, joints: usize, window: usize) -> Self {
        Self {
            stage,
            denoiser: DenoiserConfig::desk(stage, joints, window),
            batch_size: 16,
            epochs: 100,
            max_steps: None,
            weights: LossWeights::default(),
            recon_norm: ReconNorm::L2,
            adam: AdamConfig {
                lr: DESK_LEARNING_RATE,
                ..AdamConfig::default()
            },
            lr_schedule: StepLr::default(),
            seed: 0,
            beta_start: DESK_BETA_START,
            beta_end: DESK_BETA_END,
            mask_policy: MaskPolicy::GroundTruth,
            body_checkpoint: None,
            contact_source: ContactSource::GroundTruth,
            mask_threshold: DEFAULT_MASK_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.denoiser.validate()?;
        self.weights.validate()?;
        if self.denoiser.stage != self.stage {
            return Err(invalid("denoiser stage differs from the training stage"));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.max_steps == Some(0) {
            return Err(invalid("batch size and training budget must be >= 1"));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {}", self.adam.lr)));
        }
        if self.mask_policy == MaskPolicy::Synthesized && self.stage == Stage::Hands && self.body_checkpoint.is_none()
        {
            return Err(invalid("synthesized mask policy needs a body checkpoint"));
        }
        make_schedule(self.denoiser.steps, self.beta_start, self.beta_end)?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        make_schedule(self.denoiser.steps, self.beta_start, self.beta_end)
    }
}

/// One training-log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: u64,
    pub step: u64,
    pub lr: f64,
    pub loss: LossValues,
    pub grad_norm: f64,
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("log records serialize")
    }
}

/// Mean total loss per epoch, in epoch order.
pub fn epoch_curve(log: &[LogRecord]) -> Vec<(u64, f64)> {
    let mut out: Vec<(u64, f64, usize)> = Vec::new();
    for r in log {
        match out.last_mut() {
            Some((e, s, c)) if *e == r.epoch => {
                *s += r.loss.total;
                *c += 1;
            }
            _ => out.push((r.epoch, r.loss.total, 1)),
        }
    }
    out.into_iter().map(|(e, s, c)| (e, s / c as f64)).collect()
}

pub struct Trainer {
    config: TrainConfig,
    net: DenoiserNet,
    optimizer: Adam,
    schedule: DiffusionSchedule,
    step: u64,
    log: Vec<LogRecord>,
}

fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step.wrapping_add(1));
    rng
}

fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_e90c_4u64);
    rng.set_stream(epoch);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let net = DenoiserNet::new(config.denoiser.clone(), config.seed)?;
        let optimizer = Adam::new(config.adam, config.lr_schedule, net.params());
        Ok(Self {
            schedule: config.schedule()?,
            config,
            net,
            optimizer,
            step: 0,
            log: Vec::new(),
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.config.validate()?;
        let net = ckpt.to_net()?;
        let optimizer = Adam::from_state(ckpt.config.adam, ckpt.config.lr_schedule, ckpt.optimizer.clone());
        Ok(Self {
            schedule: ckpt.config.schedule()?,
            config: ckpt.config.clone(),
            net,
            optimizer,
            step: ckpt.step,
            log: Vec::new(),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            stage: self.config.stage,
            config: self.config.clone(),
            step: self.step,
            params: self.net.params().to_named(),
            bn: self.net.bn_buffers().clone(),
            optimizer: self.optimizer.state().clone(),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn net(&self) -> &DenoiserNet {
        &self.net
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Records produced since this trainer was created or loaded.
    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn steps_per_epoch(&self, data: &StageData) -> u64 {
        data.len().div_ceil(self.config.batch_size) as u64
    }

    /// Total steps of the configured budget.
    pub fn total_steps(&self, data: &StageData) -> u64 {
        let full = self.steps_per_epoch(data) * self.config.epochs as u64;
        self.config.max_steps.map_or(full, |m| m.min(full))
    }

    /// Trains until `stop_at` steps (or the budget) have been taken. On a
    /// non-finite loss or gradient the offending update is discarded and
    /// [`CoreError::Diverged`] is returned; the trainer then still holds the
    /// last good state.
    pub fn run(&mut self, data: &StageData, stop_at: Option<u64>) -> Result<()> {
        if data.stage() != self.config.stage {
            return Err(invalid("training data prepared for the other stage"));
        }
        if data.is_empty() {
            return Err(invalid("no training windows"));
        }
        if data.window() != self.config.denoiser.window || data.joints() != self.config.denoiser.joints {
            return Err(invalid("training windows do not match the denoiser configuration"));
        }
        let spe = self.steps_per_epoch(data);
        let end = stop_at.map_or(self.total_steps(data), |s| s.min(self.total_steps(data)));
        let mut order: Option<(u64, Vec<usize>)> = None;
        while self.step < end {
            let epoch = self.step / spe;
            let pos = (self.step % spe) as usize;
            if order.as_ref().map(|o| o.0) != Some(epoch) {
                order = Some((epoch, epoch_order(self.config.seed, epoch, data.len())));
            }
            let idx = &order.as_ref().expect("order set").1;
            let b = self.config.batch_size;
            let batch: Vec<usize> = idx[pos * b..((pos + 1) * b).min(idx.len())].to_vec();
            let record = self.train_step(data, &batch, epoch)?;
            log::debug!("step {} epoch {} loss {:.6}", record.step, record.epoch, record.loss.total);
            self.log.push(record);
            if (self.step % spe) == 0 {
                self.optimizer.end_epoch();
            }
        }
        Ok(())
    }

    fn train_step(&mut self, data: &StageData, batch: &[usize], epoch: u64) -> Result<LogRecord> {
        let mut rng = step_rng(self.config.seed, self.step);
        let t_max = self.schedule.steps();
        let ts: Vec<usize> = batch.iter().map(|_| rng.random_range(1..=t_max)).collect();
        let (x0, cond) = (data.targets(batch), data.conditions(batch));
        let eps: Vec<f64> = (0..x0.numel()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let per = x0.numel() / batch.len();
        let noisy: Vec<f64> = x0
            .data()
            .iter()
            .zip(&eps)
            .enumerate()
            .map(|(i, (&x, &e))| {
                let ab = self.schedule.alpha_bar(ts[i / per]);
                ab.sqrt() * x + (1.0 - ab).sqrt() * e
            })
            .collect();

        let (b, n, j) = (batch.len(), data.window(), data.joints());
        let mut g = Graph::new();
        let xt = g.constant(Tensor::new(&[b, n * j, 3], noisy)?);
        let cv = g.constant(cond);
        let masks = data.token_masks(batch);
        let fwd = self.net.forward(&mut g, xt, &ts, cv, masks.as_ref(), Mode::Train)?;
        let pred = g.reshape(fwd.x0, &[b, n, j, 3])?;
        let gt = x0.reshape(&[b, n, j, 3])?;

        let recon = recon_loss(&mut g, &gt, pred, self.config.recon_norm)?;
        // Reaction distances need both characters in one frame.
        let offsets = data.reaction_offsets(batch);
        let off = g.constant(offsets.reactor.clone());
        let pred_shared = g.add(pred, off)?;
        let gt_shared = add_tensors(&gt, &offsets.reactor)?;
        let reaction = reaction_loss(&mut g, &gt_shared, pred_shared, &offsets.actor_shared)?;
        let vel = velocity_loss(&mut g, &gt, pred)?;
        let acc = acceleration_loss(&mut g, &gt, pred)?;
        let bone = bone_loss(&mut g, &gt, pred, data.bones())?;
        let foot = match data.feet() {
            Some(feet) if self.config.weights.foot_active(epoch as usize) => {
                let roots = g.constant(data.world_offsets(batch));
                let world = g.add(pred, roots)?;
                let contacts = match self.config.contact_source {
                    ContactSource::GroundTruth => data.contacts(batch),
                    ContactSource::Synthesized => data.detect_contacts(g.value(world))?,
                };
                foot_loss(&mut g, world, feet, &contacts)?
            }
            _ => g.constant(Tensor::scalar(0.0)),
        };
        let terms = LossTerms {
            recon,
            reaction,
            vel,
            acc,
            bone,
            foot,
        };
        let total = total_loss(&mut g, &terms, &self.config.weights, epoch as usize)?;
        let values = terms.values(&g, total);
        let step = self.step + 1;
        if !values.total.is_finite() {
            return Err(CoreError::Diverged {
                step,
                message: format!("non-finite loss {}", values.total),
            });
        }
        let store = self.net.params_mut();
        store.zero_grad();
        g.backward_into(total, store)?;
        let mut sq = 0.0;
        for (_, p) in store.iter() {
            if let Some(gr) = &p.grad {
                sq += gr.data().iter().map(|v| v * v).sum::<f64>();
            }
        }
        let grad_norm = sq.sqrt();
        if !grad_norm.is_finite() {
            store.zero_grad();
            return Err(CoreError::Diverged {
                step,
                message: "non-finite gradient".into(),
            });
        }
        let lr = self.optimizer.lr();
        self.optimizer.step(store)?;
        if let Some(stats) = &fwd.bn_stats {
            self.net.update_bn(stats);
        }
        self.step = step;
        Ok(LogRecord {
            epoch,
            step,
            lr,
            loss: values,
            grad_norm,
        })
    }
}

fn add_tensors(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(invalid("offset shape mismatch"));
    }
    Ok(Tensor::new(a.shape(), a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect())?)
}
