//! `sample` and `edit`.

use std::path::Path;
use std::sync::Arc;

use ndarray::{s, Array3};
use remos_core::denoiser::{DenoiserNet, Stage};
use remos_core::diffusion::{
    sample_reactive, DiffusionSchedule, EditConstraint, EditKind, GuidanceConfig, GuidancePlacement, SampleRequest,
    SamplerConfig,
};
use remos_core::motion::{
    normalize_pair, read_motion_document, save_motion, InteractionPair, MotionSequence, NormalizationTransform, Role,
    Skeleton, SkeletonPreset,
};
use remos_core::trainer::load_checkpoint;
use serde::Deserialize;

use crate::config::RunConfig;
use crate::error::{input, CliError, CliResult};

pub struct Models {
    pub body: DenoiserNet,
    pub hands: DenoiserNet,
    pub schedule: DiffusionSchedule,
    pub window: usize,
}

pub fn load_models(cfg: &RunConfig) -> CliResult<Models> {
    let body = load_checkpoint(&cfg.require_path("body_checkpoint")?, Some(Stage::Body))?;
    let hands = load_checkpoint(&cfg.require_path("hands_checkpoint")?, Some(Stage::Hands))?;
    let schedule = body.config.schedule()?;
    if hands.config.schedule()? != schedule {
        return Err(input("body and hand checkpoints use different noise schedules"));
    }
    let window = body.config.denoiser.window;
    if hands.config.denoiser.window != window {
        return Err(input("body and hand checkpoints use different window lengths"));
    }
    Ok(Models {
        body: body.to_net()?,
        hands: hands.to_net()?,
        schedule,
        window,
    })
}

impl Models {
    pub fn check_skeleton(&self, sk: &Skeleton) -> CliResult<()> {
        if self.body.config().joints != sk.num_body_joints() || self.hands.config().joints != sk.num_hand_joints() {
            return Err(input(format!(
                "checkpoints expect {} body and {} hand joints, motion has {} and {}",
                self.body.config().joints,
                self.hands.config().joints,
                sk.num_body_joints(),
                sk.num_hand_joints()
            )));
        }
        Ok(())
    }
}

pub fn sampler_config(cfg: &RunConfig, skeleton: &Skeleton) -> CliResult<SamplerConfig> {
    let mut s = SamplerConfig::new(cfg.get_or("seed", 0)?);
    s.deterministic = cfg.get_or("deterministic", false)?;
    s.mask_threshold = cfg.get_or("mask_threshold", s.mask_threshold)?;
    if cfg.get_or("guidance", false)? {
        let mut g = GuidanceConfig::for_skeleton(skeleton);
        g.scale = cfg.get_or("guidance_scale", g.scale)?;
        g.placement = match cfg.raw("guidance_placement").unwrap_or("before_posterior") {
            "before_posterior" => GuidancePlacement::BeforePosterior,
            "after_posterior" => GuidancePlacement::AfterPosterior,
            o => {
                return Err(CliError::Config(format!(
                    "guidance_placement must be before_posterior or after_posterior, got `{o}`"
                )))
            }
        };
        g.validate().map_err(|e| CliError::Config(e.to_string()))?;
        s.guidance = Some(g);
    } else {
        cfg.raw("guidance_scale");
        cfg.raw("guidance_placement");
    }
    Ok(s)
}

/// Loads a motion file whose skeleton is one of the presets.
pub fn load_any_motion(path: &Path) -> CliResult<(MotionSequence, Arc<Skeleton>)> {
    let doc = read_motion_document(path)?;
    let preset = SkeletonPreset::detect(&doc.joint_names, &doc.parents())
        .ok_or_else(|| input(format!("{}: skeleton matches no known preset", path.display())))?;
    let sk = Arc::new(preset.build());
    Ok((doc.to_sequence(&sk, path)?, sk))
}

fn as_role(seq: &MotionSequence, role: Role) -> CliResult<MotionSequence> {
    Ok(MotionSequence::new(seq.fps(), seq.positions().clone(), role)?)
}

/// Normalizes an actor on its own; only the actor half of the returned
/// pair is meaningful.
pub fn normalize_actor(actor: &MotionSequence, sk: &Arc<Skeleton>) -> CliResult<(Array3<f64>, NormalizationTransform)> {
    let pair = InteractionPair::new(as_role(actor, Role::Actor)?, as_role(actor, Role::Reactor)?, sk.clone())?;
    let (n, tr) = normalize_pair(&pair)?;
    Ok((n.actor().positions().clone(), tr))
}

/// Window starts covering `frames` frames with windows of `len`; the last
/// window is aligned to the end.
pub fn cover_starts(frames: usize, len: usize) -> Vec<usize> {
    let mut starts: Vec<usize> = (0..frames / len).map(|k| k * len).collect();
    if frames % len != 0 {
        starts.push(frames - len);
    }
    starts
}

pub fn run_sample(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let actor_path = cfg.require_path("actor")?;
    let models = load_models(cfg)?;
    let (actor, sk) = load_any_motion(&actor_path)?;
    let sampler = sampler_config(cfg, &sk)?;
    cfg.finish()?;
    models.check_skeleton(&sk)?;
    let (n, w) = (actor.num_frames(), models.window);
    if n < w {
        return Err(input(format!("actor has {n} frames, the model window is {w}")));
    }
    let mut world = Array3::zeros(actor.positions().dim());
    for (k, start) in cover_starts(n, w).into_iter().enumerate() {
        let (norm, tr) = normalize_actor(&actor.window(start, w)?, &sk)?;
        let req = SampleRequest {
            actor: norm.view(),
            transform: Some(&tr),
            edits: Vec::new(),
            stream: k as u64,
        };
        let sample = sample_reactive(&models.body, &models.hands, &models.schedule, &[req], &sk, &sampler)?
            .pop()
            .expect("one request");
        let reactor = sample.world.expect("transform given");
        world.slice_mut(s![start..start + w, .., ..]).assign(&reactor);
    }
    std::fs::create_dir_all(out)?;
    let seq = MotionSequence::new(actor.fps(), world, Role::Reactor)?;
    save_motion(&seq, &sk, &out.join("reactor.json"))?;
    Ok(())
}

/// Edit-constraint file:
///
/// ```text
/// { "constraints": [
///     { "kind": "pose-completion", "stage": "body",
///       "joints": ["l_wrist", "r_wrist"], "reference": "reference.json" },
///     { "kind": "in-betweening", "stage": "hands",
///       "frames": [0, 19], "reference": "reference.json" } ] }
/// ```
///
/// `reference` is a reactor motion file (world coordinates, same frames as
/// the actor), relative to the constraint file. Pose completion lists joint
/// names of the stage; in-betweening lists frame indices.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintFile {
    pub constraints: Vec<ConstraintEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintEntry {
    pub kind: EditKind,
    pub stage: Stage,
    #[serde(default)]
    pub joints: Vec<String>,
    #[serde(default)]
    pub frames: Vec<usize>,
    pub reference: String,
}

fn stage_joints(sk: &Skeleton, stage: Stage) -> Vec<usize> {
    match stage {
        Stage::Body => sk.body_joints().to_vec(),
        Stage::Hands => sk.hand_joints(),
    }
}

fn build_constraint(
    e: &ConstraintEntry,
    base: &Path,
    actor: &MotionSequence,
    sk: &Arc<Skeleton>,
) -> CliResult<EditConstraint> {
    let ref_path = base.join(&e.reference);
    let (reference, ref_sk) = load_any_motion(&ref_path)?;
    if ref_sk != *sk {
        return Err(input(format!("{}: skeleton differs from the actor", ref_path.display())));
    }
    if reference.num_frames() != actor.num_frames() {
        return Err(input(format!(
            "{}: {} frames, the actor has {}",
            ref_path.display(),
            reference.num_frames(),
            actor.num_frames()
        )));
    }
    let pair = InteractionPair::new(as_role(actor, Role::Actor)?, as_role(&reference, Role::Reactor)?, sk.clone())?;
    let (norm, _) = normalize_pair(&pair)?;
    let stage_ref = norm.reactor().select(&stage_joints(sk, e.stage));
    let indices = match e.kind {
        EditKind::PoseCompletion => {
            if !e.frames.is_empty() || e.joints.is_empty() {
                return Err(input("pose-completion constraints list `joints` only"));
            }
            e.joints
                .iter()
                .map(|name| {
                    let j = sk
                        .joint_index(name)
                        .ok_or_else(|| input(format!("unknown joint `{name}`")))?;
                    match e.stage {
                        Stage::Body => sk.body_local(j),
                        Stage::Hands => sk.hand_local(j),
                    }
                    .ok_or_else(|| input(format!("joint `{name}` is not part of the {} stage", e.stage.name())))
                })
                .collect::<CliResult<Vec<_>>>()?
        }
        EditKind::InBetweening => {
            if !e.joints.is_empty() || e.frames.is_empty() {
                return Err(input("in-betweening constraints list `frames` only"));
            }
            e.frames.clone()
        }
    };
    Ok(EditConstraint::new(e.kind, e.stage, indices, stage_ref)?)
}

pub fn run_edit(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let actor_path = cfg.require_path("actor")?;
    let constraint_path = cfg.require_path("constraint")?;
    let models = load_models(cfg)?;
    let (actor, sk) = load_any_motion(&actor_path)?;
    let sampler = sampler_config(cfg, &sk)?;
    cfg.finish()?;
    models.check_skeleton(&sk)?;
    if actor.num_frames() != models.window {
        return Err(input(format!(
            "edit needs an actor of exactly {} frames, got {}",
            models.window,
            actor.num_frames()
        )));
    }
    let text = std::fs::read_to_string(&constraint_path)
        .map_err(|e| input(format!("{}: {e}", constraint_path.display())))?;
    let file: ConstraintFile =
        serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", constraint_path.display())))?;
    let base = constraint_path.parent().unwrap_or(Path::new("."));
    let edits = file
        .constraints
        .iter()
        .map(|e| build_constraint(e, base, &actor, &sk))
        .collect::<CliResult<Vec<_>>>()?;
    let (norm, tr) = normalize_actor(&actor, &sk)?;
    let req = SampleRequest {
        actor: norm.view(),
        transform: Some(&tr),
        edits,
        stream: 0,
    };
    let sample = sample_reactive(&models.body, &models.hands, &models.schedule, &[req], &sk, &sampler)?
        .pop()
        .expect("one request");
    std::fs::create_dir_all(out)?;
    let seq = MotionSequence::new(actor.fps(), sample.world.expect("transform given"), Role::Reactor)?;
    save_motion(&seq, &sk, &out.join("reactor.json"))?;
    Ok(())
}
