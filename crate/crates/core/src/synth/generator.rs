use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::motion::{InteractionPair, MotionSequence, Role, Side, Skeleton, SkeletonPreset};

/// Distance between the two characters' roots when facing each other (m).
pub const FACING_DISTANCE: f64 = 0.9;
/// Reach episodes repeat with this period (frames); sides alternate.
pub const EPISODE_PERIOD: usize = 40;
/// Cosine ramp into and out of a reach episode (frames).
pub const EPISODE_RAMP: f64 = 4.0;
/// Follower wrist target offset from the leader wrist during reaches (m).
pub const WRIST_CONTACT_OFFSET: [f64; 3] = [0.0, 0.015, 0.0];

const SWING_AMPLITUDE: f64 = 0.35;
const GAIT_AMPLITUDE: f64 = 0.3;
const GAIT_FREQUENCY: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_pairs: usize,
    pub frames_per_pair: usize,
    pub fps: f64,
    pub skeleton_preset: SkeletonPreset,
    /// Follower delay behind the leader, frames.
    pub phase_lag: usize,
    pub contact_episode_rate: f64,
    pub noise_sigma: f64,
    pub window_len: usize,
    pub stride: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_pairs: 200,
            frames_per_pair: 100,
            fps: 20.0,
            skeleton_preset: SkeletonPreset::Mini,
            phase_lag: 2,
            contact_episode_rate: 0.3,
            noise_sigma: 0.0,
            window_len: 20,
            stride: 20,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len < 3 {
            return Err(invalid(format!("window length must be >= 3, got {}", self.window_len)));
        }
        if self.frames_per_pair < self.window_len {
            return Err(invalid(format!(
                "frames_per_pair ({}) is shorter than the window length ({})",
                self.frames_per_pair, self.window_len
            )));
        }
        if self.stride == 0 {
            return Err(invalid("stride must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.contact_episode_rate) {
            return Err(invalid(format!(
                "contact_episode_rate must be in [0, 1], got {}",
                self.contact_episode_rate
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(invalid(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(invalid(format!("fps must be positive, got {}", self.fps)));
        }
        Ok(())
    }
}

/// Per-pair random parameters of the leader.
#[derive(Debug, Clone)]
struct LeaderParams {
    amp: [[f64; 2]; 2],
    freq: [[f64; 2]; 2],
    phase: [[f64; 2]; 2],
    heading0: f64,
    heading_amp: f64,
    heading_freq: f64,
    heading_phase: f64,
    swing_freq: f64,
    swing_phase: f64,
    gait_phase: f64,
    first_side: usize,
    active_frames: usize,
}

impl LeaderParams {
    fn draw(rng: &mut ChaCha8Rng, rate: f64) -> Self {
        let mut amp = [[0.0; 2]; 2];
        let mut freq = [[0.0; 2]; 2];
        let mut phase = [[0.0; 2]; 2];
        for c in 0..2 {
            amp[c] = [rng.random_range(0.2..0.4), rng.random_range(0.1..0.3)];
            let f = rng.random_range(0.03..0.06);
            freq[c] = [f, f * std::f64::consts::SQRT_2 * rng.random_range(0.9..1.1)];
            phase[c] = [rng.random_range(0.0..TAU), rng.random_range(0.0..TAU)];
        }
        Self {
            amp,
            freq,
            phase,
            heading0: rng.random_range(0.0..TAU),
            heading_amp: rng.random_range(0.1..0.5),
            heading_freq: rng.random_range(0.02..0.05),
            heading_phase: rng.random_range(0.0..TAU),
            swing_freq: rng.random_range(0.15..0.3),
            swing_phase: rng.random_range(0.0..TAU),
            gait_phase: rng.random_range(0.0..TAU),
            first_side: rng.random_range(0..2),
            active_frames: (rate * EPISODE_PERIOD as f64).ceil() as usize,
        }
    }

    fn root(&self, tau: f64) -> Vector3<f64> {
        let c = |k: usize| {
            (0..2)
                .map(|i| self.amp[k][i] * (self.freq[k][i] * tau + self.phase[k][i]).sin())
                .sum::<f64>()
        };
        Vector3::new(c(0), 0.0, c(1))
    }

    fn heading(&self, tau: f64) -> f64 {
        self.heading0 + self.heading_amp * (self.heading_freq * tau + self.heading_phase).sin()
    }

    /// Reach weight of one side at time `tau`: 1 inside an episode, cosine
    /// ramp for `EPISODE_RAMP` frames around it, 0 elsewhere.
    fn reach_weight(&self, side: Side, tau: f64) -> f64 {
        let a = self.active_frames;
        if a == 0 {
            return 0.0;
        }
        let p = EPISODE_PERIOD as f64;
        let k0 = (tau / p).floor() as i64;
        let mut w: f64 = 0.0;
        for k in k0 - 1..=k0 + 1 {
            if (k + self.first_side as i64).rem_euclid(2) as usize != side.index() {
                continue;
            }
            let start = k as f64 * p;
            let end = start + (a - 1) as f64;
            let dist = (start - tau).max(tau - end).max(0.0);
            if dist < EPISODE_RAMP {
                w = w.max(0.5 * (1.0 + (PI * dist / EPISODE_RAMP).cos()));
            }
        }
        w
    }
}

/// Heading direction (unit, horizontal) for a yaw angle about +y.
fn facing(yaw: f64) -> Vector3<f64> {
    Vector3::new(yaw.sin(), 0.0, yaw.cos())
}

/// Elbow and wrist of a two-bone chain reaching from `shoulder` toward
/// `target`; unreachable targets are clamped along the same direction.
pub(crate) fn two_bone_ik(
    shoulder: Vector3<f64>,
    target: Vector3<f64>,
    upper: f64,
    fore: f64,
    pole: Vector3<f64>,
) -> (Vector3<f64>, Vector3<f64>) {
    let to = target - shoulder;
    let raw = to.norm();
    let u = if raw > 1e-12 { to / raw } else { Vector3::new(0.0, -1.0, 0.0) };
    let d = raw.clamp((upper - fore).abs() + 1e-6, (upper + fore) * 0.999);
    let wrist = shoulder + u * d;
    let cos_a = ((upper * upper + d * d - fore * fore) / (2.0 * upper * d)).clamp(-1.0, 1.0);
    let mut v = pole - u * pole.dot(&u);
    if v.norm() < 1e-9 {
        v = u.cross(&Vector3::x());
        if v.norm() < 1e-9 {
            v = u.cross(&Vector3::z());
        }
    }
    let v = v.normalize();
    let elbow = shoulder + upper * (cos_a * u + (1.0 - cos_a * cos_a).sqrt() * v);
    (elbow, wrist)
}

/// Precomputed skeleton facts used by the pose generator.
struct Rig {
    rest: Vec<Vector3<f64>>,
    arms: [[usize; 3]; 2],
    hands: [Vec<usize>; 2],
    /// Per side: joints rotated by the gait and the pivot they rotate about.
    legs: [(Vec<usize>, usize); 2],
}

impl Rig {
    fn new(s: &Skeleton) -> Self {
        let rest: Vec<Vector3<f64>> = s.rest_positions().into_iter().map(Vector3::from).collect();
        let children = |j: usize| -> Vec<usize> {
            (0..s.num_joints()).filter(|&k| s.parents()[k] == Some(j)).collect()
        };
        let descendants = |top: usize| -> Vec<usize> {
            let mut out = Vec::new();
            let mut stack = children(top);
            while let Some(k) = stack.pop() {
                out.push(k);
                stack.extend(children(k));
            }
            out.sort();
            out
        };
        let legs = [Side::Left, Side::Right].map(|side| {
            let prefix = if side == Side::Left { "l_" } else { "r_" };
            let foot = s
                .foot_joints()
                .iter()
                .copied()
                .find(|&f| s.joint_names()[f].starts_with(prefix))
                .expect("each side has a foot joint");
            let mut top = foot;
            while let Some(p) = s.parents()[top] {
                if p == s.root() {
                    break;
                }
                top = p;
            }
            let below = descendants(top);
            if below.is_empty() {
                (vec![top], s.root())
            } else {
                (below, top)
            }
        });
        Self {
            rest,
            arms: [s.arm_chain(Side::Left), s.arm_chain(Side::Right)],
            hands: [s.hand_joints_of(Side::Left).to_vec(), s.hand_joints_of(Side::Right).to_vec()],
            legs,
        }
    }

    fn arm_lengths(&self, side: Side) -> (f64, f64) {
        let [sh, el, wr] = self.arms[side.index()];
        (
            (self.rest[el] - self.rest[sh]).norm(),
            (self.rest[wr] - self.rest[el]).norm(),
        )
    }

    /// Re-solves one arm toward a target and carries its hand rigidly.
    fn place_arm(&self, pose: &mut [Vector3<f64>], side: Side, target: Vector3<f64>, pole: Vector3<f64>) {
        let [sh, el, wr] = self.arms[side.index()];
        let (upper, fore) = self.arm_lengths(side);
        let (elbow, wrist) = two_bone_ik(pose[sh], target, upper, fore, pole);
        let old_fore = pose[wr] - pose[el];
        let new_fore = wrist - elbow;
        let turn = UnitQuaternion::rotation_between(&old_fore, &new_fore).unwrap_or_else(UnitQuaternion::identity);
        let old_wrist = pose[wr];
        for &h in &self.hands[side.index()] {
            pose[h] = wrist + turn * (pose[h] - old_wrist);
        }
        pose[el] = elbow;
        pose[wr] = wrist;
    }
}

/// World-space leader pose at continuous time `tau` (frames).
fn leader_pose(rig: &Rig, p: &LeaderParams, tau: f64) -> Vec<Vector3<f64>> {
    // Local frame: facing +z, left = +x, root at its rest offset.
    let mut pose = rig.rest.clone();
    for side in Side::BOTH {
        let sign = if side == Side::Left { 1.0 } else { -1.0 };
        let gait = Rotation3::from_axis_angle(
            &Vector3::x_axis(),
            sign * GAIT_AMPLITUDE * (GAIT_FREQUENCY * tau + p.gait_phase).sin(),
        );
        let (joints, pivot) = &rig.legs[side.index()];
        for &j in joints {
            pose[j] = rig.rest[*pivot] + gait * (rig.rest[j] - rig.rest[*pivot]);
        }

        let [sh, _, _] = rig.arms[side.index()];
        let (upper, fore) = rig.arm_lengths(side);
        let shoulder = pose[sh];
        let swing = sign * SWING_AMPLITUDE * (p.swing_freq * tau + p.swing_phase).sin();
        let hang = Vector3::new(0.0, -swing.cos(), swing.sin()) * 0.97 * (upper + fore);
        let reach = Vector3::new(shoulder.x - sign * 0.03, shoulder.y - 0.15, FACING_DISTANCE / 2.0);
        let w = p.reach_weight(side, tau);
        let target = (shoulder + hang) * (1.0 - w) + reach * w;
        rig.place_arm(&mut pose, side, target, Vector3::new(0.0, -0.5, -1.0));
    }
    let yaw = Rotation3::from_axis_angle(&Vector3::y_axis(), p.heading(tau));
    let root = p.root(tau);
    pose.iter().map(|v| root + yaw * v).collect()
}

/// Reflection across the plane facing the leader at distance
/// `FACING_DISTANCE / 2`, with left/right labels swapped.
pub(crate) fn mirror_pose(
    leader: &[Vector3<f64>],
    root: Vector3<f64>,
    forward: Vector3<f64>,
    mirror_map: &[usize],
) -> Vec<Vector3<f64>> {
    let center = root + forward * (FACING_DISTANCE / 2.0);
    (0..leader.len())
        .map(|j| {
            let p = leader[mirror_map[j]];
            p - forward * (2.0 * (p - center).dot(&forward))
        })
        .collect()
}

fn to_array(frames: &[Vec<Vector3<f64>>]) -> Array3<f64> {
    let j = frames[0].len();
    Array3::from_shape_fn((frames.len(), j, 3), |(f, k, c)| frames[f][k][c])
}

fn pair_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// One leader/follower pair in world coordinates. The leader is the actor,
/// the follower the reactor.
pub fn generate_pair(config: &SynthConfig, index: usize) -> Result<InteractionPair> {
    config.validate()?;
    generate_with_skeleton(config, index, Arc::new(config.skeleton_preset.build()))
}

pub(crate) fn generate_with_skeleton(
    config: &SynthConfig,
    index: usize,
    skeleton: Arc<Skeleton>,
) -> Result<InteractionPair> {
    let mut rng = pair_rng(config.seed, index);
    let params = LeaderParams::draw(&mut rng, config.contact_episode_rate);
    let rig = Rig::new(&skeleton);
    let n = config.frames_per_pair;
    let lag = config.phase_lag as f64;
    let offset = Vector3::from(WRIST_CONTACT_OFFSET);

    let mut leader = Vec::with_capacity(n);
    let mut follower = Vec::with_capacity(n);
    for f in 0..n {
        let now = f as f64;
        let lead = leader_pose(&rig, &params, now);
        let past = if config.phase_lag == 0 { lead.clone() } else { leader_pose(&rig, &params, now - lag) };
        let forward = facing(params.heading(now - lag));
        let mut follow = mirror_pose(&past, past[skeleton.root()], forward, skeleton.mirror_map());
        for side in Side::BOTH {
            let w = params.reach_weight(side, now);
            if w > 0.0 {
                let mine = side.opposite();
                let wr = skeleton.wrist(mine);
                let target = follow[wr] * (1.0 - w) + (lead[skeleton.wrist(side)] + offset) * w;
                rig.place_arm(&mut follow, mine, target, Vector3::new(0.0, -0.5, 0.0) + forward);
            }
        }
        leader.push(lead);
        follower.push(follow);
    }
    let mut reactor = to_array(&follower);
    if config.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, config.noise_sigma).map_err(|e| invalid(e.to_string()))?;
        reactor.mapv_inplace(|v| v + normal.sample(&mut rng));
    }
    InteractionPair::new(
        MotionSequence::new(config.fps, to_array(&leader), Role::Actor)?,
        MotionSequence::new(config.fps, reactor, Role::Reactor)?,
        skeleton,
    )
}
