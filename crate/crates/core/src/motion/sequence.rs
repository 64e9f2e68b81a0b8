use std::sync::Arc;

use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use super::skeleton::Skeleton;
use crate::error::{invalid, shape, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Actor,
    Reactor,
}

/// Joint positions over time, `N × J × 3` meters.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    fps: f64,
    positions: Array3<f64>,
    role: Role,
}

impl MotionSequence {
    pub fn new(fps: f64, positions: Array3<f64>, role: Role) -> Result<Self> {
        let (n, j, c) = positions.dim();
        if c != 3 {
            return Err(shape(format!("positions must be N x J x 3, got {n} x {j} x {c}")));
        }
        if n < 2 {
            return Err(invalid(format!("motion needs N >= 2 frames, got {n}")));
        }
        if j == 0 {
            return Err(invalid("motion has no joints"));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(invalid(format!("fps must be positive, got {fps}")));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(invalid("motion contains non-finite positions"));
        }
        Ok(Self {
            fps,
            positions,
            role,
        })
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn positions(&self) -> &Array3<f64> {
        &self.positions
    }

    pub fn into_positions(self) -> Array3<f64> {
        self.positions
    }

    pub fn num_frames(&self) -> usize {
        self.positions.dim().0
    }

    pub fn num_joints(&self) -> usize {
        self.positions.dim().1
    }

    /// Frames `start..start + len`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.num_frames() {
            return Err(invalid(format!(
                "window {start}..{} exceeds {} frames",
                start + len,
                self.num_frames()
            )));
        }
        Self::new(
            self.fps,
            self.positions
                .slice(ndarray::s![start..start + len, .., ..])
                .to_owned(),
            self.role,
        )
    }

    /// Positions of a joint subset, `N × |joints| × 3`.
    pub fn select(&self, joints: &[usize]) -> Array3<f64> {
        self.positions.select(Axis(1), joints)
    }
}

/// Frame-aligned actor and reactor over one skeleton.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionPair {
    actor: MotionSequence,
    reactor: MotionSequence,
    skeleton: Arc<Skeleton>,
}

impl InteractionPair {
    pub fn new(
        actor: MotionSequence,
        reactor: MotionSequence,
        skeleton: Arc<Skeleton>,
    ) -> Result<Self> {
        if actor.role() != Role::Actor || reactor.role() != Role::Reactor {
            return Err(invalid("pair needs an actor and a reactor sequence"));
        }
        let j = skeleton.num_joints();
        if actor.num_joints() != j || reactor.num_joints() != j {
            return Err(shape(format!(
                "skeleton has {j} joints, actor {} and reactor {}",
                actor.num_joints(),
                reactor.num_joints()
            )));
        }
        if actor.num_frames() != reactor.num_frames() {
            return Err(shape(format!(
                "actor has {} frames, reactor {}",
                actor.num_frames(),
                reactor.num_frames()
            )));
        }
        if actor.fps() != reactor.fps() {
            return Err(invalid("actor and reactor fps differ"));
        }
        Ok(Self {
            actor,
            reactor,
            skeleton,
        })
    }

    pub fn actor(&self) -> &MotionSequence {
        &self.actor
    }

    pub fn reactor(&self) -> &MotionSequence {
        &self.reactor
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    pub fn skeleton_arc(&self) -> &Arc<Skeleton> {
        &self.skeleton
    }

    pub fn num_frames(&self) -> usize {
        self.actor.num_frames()
    }

    pub fn fps(&self) -> f64 {
        self.actor.fps()
    }

    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        Self::new(
            self.actor.window(start, len)?,
            self.reactor.window(start, len)?,
            self.skeleton.clone(),
        )
    }
}

