use std::sync::Arc;

use ndarray::{Array2, Array3, Axis};
use remos_autodiff::Tensor;

use super::eval::sample_body_windows;
use crate::denoiser::{Stage, TokenMasks};
use crate::diffusion::{DiffusionSchedule, SamplerConfig, X0Predictor};
use crate::error::{invalid, Result};
use crate::motion::{
    compute_hand_masks, detect_foot_contacts, hand_masks_from_bodies, HandInteractionMask, MotionSequence, Role,
    Side, Skeleton, DEFAULT_HEIGHT_EPS, DEFAULT_SPEED_EPS,
};
use crate::synth::Window;

/// Offsets that move both characters of a batch into a shared frame for
/// the reaction loss.
pub(crate) struct ReactionOffsets {
    pub reactor: Tensor,
    pub actor_shared: Tensor,
}

/// Training windows of one stage, flattened for fast batch assembly.
pub struct StageData {
    stage: Stage,
    skeleton: Arc<Skeleton>,
    fps: f64,
    n: usize,
    j: usize,
    targets: Vec<Vec<f64>>,
    conds: Vec<Vec<f64>>,
    reactor_offsets: Vec<Vec<f64>>,
    actor_shared: Vec<Vec<f64>>,
    world_offsets: Vec<Vec<f64>>,
    contacts: Vec<Array2<bool>>,
    masks: Option<Vec<HandInteractionMask>>,
    bones: Vec<(usize, Option<usize>)>,
    feet: Option<Vec<usize>>,
}

fn flat(a: &Array3<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

/// Wrist positions of `body` (`N × J_B × 3`) broadcast onto the hand joints.
fn wrist_offsets(body: &Array3<f64>, skeleton: &Skeleton) -> Array3<f64> {
    let n = body.dim().0;
    let mut out = Array3::zeros((n, skeleton.num_hand_joints(), 3));
    for side in Side::BOTH {
        let w = skeleton.body_local(skeleton.wrist(side)).expect("wrist is a body joint");
        for f in 0..n {
            for h in skeleton.hand_range(side) {
                for c in 0..3 {
                    out[[f, h, c]] = body[[f, w, c]];
                }
            }
        }
    }
    out
}

impl StageData {
    pub fn body(windows: &[Window], skeleton: Arc<Skeleton>) -> Result<Self> {
        Self::build(Stage::Body, windows, skeleton, None)
    }

    /// Hand-stage data; `masks` holds one mask per window.
    pub fn hands(windows: &[Window], skeleton: Arc<Skeleton>, masks: Vec<HandInteractionMask>) -> Result<Self> {
        if masks.len() != windows.len() {
            return Err(invalid(format!("{} masks for {} windows", masks.len(), windows.len())));
        }
        Self::build(Stage::Hands, windows, skeleton, Some(masks))
    }

    fn build(
        stage: Stage,
        windows: &[Window],
        skeleton: Arc<Skeleton>,
        masks: Option<Vec<HandInteractionMask>>,
    ) -> Result<Self> {
        let s = &*skeleton;
        let first = windows.first().ok_or_else(|| invalid("no windows"))?;
        let n = first.pair.num_frames();
        if windows.iter().any(|w| w.pair.num_frames() != n || w.pair.skeleton() != s) {
            return Err(invalid("windows must share length and skeleton"));
        }
        let hand_joints = s.hand_joints();
        let joints: &[usize] = match stage {
            Stage::Body => s.body_joints(),
            Stage::Hands => &hand_joints,
        };
        let mut data = Self {
            stage,
            skeleton: skeleton.clone(),
            fps: first.pair.fps(),
            n,
            j: joints.len(),
            targets: Vec::new(),
            conds: Vec::new(),
            reactor_offsets: Vec::new(),
            actor_shared: Vec::new(),
            world_offsets: Vec::new(),
            contacts: Vec::new(),
            masks,
            bones: Vec::new(),
            feet: None,
        };
        match stage {
            Stage::Body => {
                data.bones = s.local_bones(s.body_joints(), &[]);
                data.feet = Some(
                    s.foot_joints()
                        .iter()
                        .map(|&f| s.body_local(f).expect("feet are body joints"))
                        .collect(),
                );
            }
            Stage::Hands => {
                data.bones = s.local_bones(&hand_joints, &[s.wrist(Side::Left), s.wrist(Side::Right)]);
            }
        }
        for w in windows {
            let reactor = w.pair.reactor().select(joints);
            let actor = w.pair.actor().select(joints);
            let (r_off, a_off) = match stage {
                Stage::Body => (Array3::zeros(reactor.dim()), Array3::zeros(actor.dim())),
                Stage::Hands => (
                    wrist_offsets(&w.pair.reactor().select(s.body_joints()), s),
                    wrist_offsets(&w.pair.actor().select(s.body_joints()), s),
                ),
            };
            let mut world = Array3::zeros(reactor.dim());
            for f in 0..n {
                for k in 0..joints.len() {
                    for c in 0..3 {
                        world[[f, k, c]] = w.transform.actor_root[[f, c]];
                    }
                }
            }
            data.targets.push(flat(&reactor));
            data.conds.push(flat(&actor));
            data.reactor_offsets.push(flat(&r_off));
            data.actor_shared.push(flat(&(&actor + &a_off)));
            data.world_offsets.push(flat(&world));
            data.contacts.push(w.foot_contacts.clone());
        }
        Ok(data)
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn window(&self) -> usize {
        self.n
    }

    pub fn joints(&self) -> usize {
        self.j
    }

    pub fn masks(&self) -> Option<&[HandInteractionMask]> {
        self.masks.as_deref()
    }

    pub(crate) fn bones(&self) -> &[(usize, Option<usize>)] {
        &self.bones
    }

    pub(crate) fn feet(&self) -> Option<&[usize]> {
        self.feet.as_deref()
    }

    fn stack(&self, rows: &[Vec<f64>], batch: &[usize], shape: &[usize]) -> Tensor {
        let mut d = Vec::with_capacity(batch.len() * rows[0].len());
        for &i in batch {
            d.extend_from_slice(&rows[i]);
        }
        Tensor::new(shape, d).expect("batch layout")
    }

    /// Clean targets, `[B, N·J, 3]`.
    pub(crate) fn targets(&self, batch: &[usize]) -> Tensor {
        self.stack(&self.targets, batch, &[batch.len(), self.n * self.j, 3])
    }

    pub(crate) fn conditions(&self, batch: &[usize]) -> Tensor {
        self.stack(&self.conds, batch, &[batch.len(), self.n * self.j, 3])
    }

    pub(crate) fn reaction_offsets(&self, batch: &[usize]) -> ReactionOffsets {
        let shape = [batch.len(), self.n, self.j, 3];
        ReactionOffsets {
            reactor: self.stack(&self.reactor_offsets, batch, &shape),
            actor_shared: self.stack(&self.actor_shared, batch, &shape),
        }
    }

    pub(crate) fn world_offsets(&self, batch: &[usize]) -> Tensor {
        self.stack(&self.world_offsets, batch, &[batch.len(), self.n, self.j, 3])
    }

    pub(crate) fn contacts(&self, batch: &[usize]) -> Vec<Array2<bool>> {
        batch.iter().map(|&i| self.contacts[i].clone()).collect()
    }

    pub(crate) fn token_masks(&self, batch: &[usize]) -> Option<TokenMasks> {
        self.masks
            .as_ref()
            .map(|m| TokenMasks::from_masks(&batch.iter().map(|&i| &m[i]).collect::<Vec<_>>()))
    }

    /// Foot contacts detected on world-space body predictions
    /// `[B, N, J_B, 3]`.
    pub(crate) fn detect_contacts(&self, world: &Tensor) -> Result<Vec<Array2<bool>>> {
        let s = &*self.skeleton;
        let (b, n, jb) = (world.shape()[0], self.n, self.j);
        let mut out = Vec::with_capacity(b);
        for i in 0..b {
            let mut full = Array3::zeros((n, s.num_joints(), 3));
            for f in 0..n {
                for (k, &j) in s.body_joints().iter().enumerate() {
                    for c in 0..3 {
                        full[[f, j, c]] = world.data()[((i * n + f) * jb + k) * 3 + c];
                    }
                }
            }
            let seq = MotionSequence::new(self.fps, full, Role::Reactor)?;
            out.push(detect_foot_contacts(&seq, s, DEFAULT_HEIGHT_EPS, DEFAULT_SPEED_EPS)?);
        }
        Ok(out)
    }
}

/// Hand masks from the ground-truth reactor body of each window.
pub fn ground_truth_masks(windows: &[Window], threshold: f64) -> Result<Vec<HandInteractionMask>> {
    windows.iter().map(|w| compute_hand_masks(&w.pair, threshold)).collect()
}

/// Hand masks from reactor bodies sampled by a frozen body model, `chunk`
/// windows per batch.
pub fn synthesized_masks(
    windows: &[Window],
    skeleton: &Skeleton,
    body: &dyn X0Predictor,
    schedule: &DiffusionSchedule,
    sampler: &SamplerConfig,
    chunk: usize,
) -> Result<Vec<HandInteractionMask>> {
    let bodies = sample_body_windows(body, schedule, windows, skeleton, sampler, chunk)?;
    windows
        .iter()
        .zip(&bodies)
        .map(|(w, b)| {
            let actor = w.pair.actor().positions().select(Axis(1), skeleton.body_joints());
            hand_masks_from_bodies(actor.view(), b.view(), skeleton, sampler.mask_threshold)
        })
        .collect()
}
