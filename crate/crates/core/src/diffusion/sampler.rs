use ndarray::{Array3, ArrayView3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::edit::{apply_edit_constraint, EditConstraint};
use super::guidance::{apply_guidance, masked_arm_residual, GuidanceConfig, GuidancePlacement};
use super::schedule::DiffusionSchedule;
use crate::denoiser::{DenoiserNet, Stage, TokenMasks};
use crate::error::{invalid, shape, Result};
use crate::motion::{denormalize_reactor, hand_masks_from_bodies, HandInteractionMask, NormalizationTransform, Skeleton};

/// Anything that predicts the clean stage motion from a noisy sample.
pub trait X0Predictor {
    fn stage(&self) -> Stage;

    /// Number of diffusion steps the predictor was built for, if any.
    fn steps(&self) -> Option<usize>;

    /// Batched prediction at a shared timestep. `masks` is given for the
    /// hand stage only.
    fn predict_x0(
        &self,
        x_t: &[ArrayView3<f64>],
        t: usize,
        cond: &[ArrayView3<f64>],
        masks: Option<&[HandInteractionMask]>,
    ) -> Result<Vec<Array3<f64>>>;
}

impl X0Predictor for DenoiserNet {
    fn stage(&self) -> Stage {
        self.config().stage
    }

    fn steps(&self) -> Option<usize> {
        Some(self.config().steps)
    }

    fn predict_x0(
        &self,
        x_t: &[ArrayView3<f64>],
        t: usize,
        cond: &[ArrayView3<f64>],
        masks: Option<&[HandInteractionMask]>,
    ) -> Result<Vec<Array3<f64>>> {
        let ts = vec![t; x_t.len()];
        let token_masks = masks.map(|m| TokenMasks::from_masks(&m.iter().collect::<Vec<_>>()));
        self.predict(x_t, &ts, cond, token_masks.as_ref())
    }
}

/// Returns fixed clean motions regardless of its input, one per batch
/// entry.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    pub stage: Stage,
    pub targets: Vec<Array3<f64>>,
}

impl X0Predictor for OracleDenoiser {
    fn stage(&self) -> Stage {
        self.stage
    }

    fn steps(&self) -> Option<usize> {
        None
    }

    fn predict_x0(
        &self,
        x_t: &[ArrayView3<f64>],
        _t: usize,
        _cond: &[ArrayView3<f64>],
        _masks: Option<&[HandInteractionMask]>,
    ) -> Result<Vec<Array3<f64>>> {
        if x_t.len() != self.targets.len() {
            return Err(shape(format!(
                "oracle holds {} targets, batch has {}",
                self.targets.len(),
                x_t.len()
            )));
        }
        for (x, y) in x_t.iter().zip(&self.targets) {
            if x.dim() != y.dim() {
                return Err(shape(format!("oracle target {:?} vs sample {:?}", y.dim(), x.dim())));
            }
        }
        Ok(self.targets.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub seed: u64,
    /// Posterior mean only, no injected noise.
    pub deterministic: bool,
    pub guidance: Option<GuidanceConfig>,
    pub mask_threshold: f64,
}

impl SamplerConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            deterministic: false,
            guidance: None,
            mask_threshold: crate::motion::DEFAULT_MASK_THRESHOLD,
        }
    }
}

/// One sample to draw: a normalized actor (`N × J × 3`) and optional
/// edits. `stream` selects the random stream so results do not depend on
/// batch composition.
#[derive(Debug, Clone)]
pub struct SampleRequest<'a> {
    pub actor: ArrayView3<'a, f64>,
    pub transform: Option<&'a NormalizationTransform>,
    pub edits: Vec<EditConstraint>,
    pub stream: u64,
}

/// Per-step record of one stage run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageTrace {
    /// Masked arm residual of the predicted clean body after guidance,
    /// for `t = T…1`. Empty unless guidance is configured.
    pub arm_residual: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ReactorSample {
    /// Normalized reactor, `N × J × 3`.
    pub normalized: Array3<f64>,
    /// World-space reactor when the request carried a transform.
    pub world: Option<Array3<f64>>,
    pub masks: HandInteractionMask,
    pub body_trace: StageTrace,
}

fn standard_normal(rng: &mut ChaCha8Rng, dim: (usize, usize, usize)) -> Array3<f64> {
    Array3::from_shape_simple_fn(dim, || StandardNormal.sample(rng))
}

fn stage_rng(seed: u64, stream: u64, stage: Stage) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * stream + u64::from(stage == Stage::Hands));
    rng
}

/// Conditions of one stage run, per batch entry.
pub struct StageInputs<'a> {
    pub cond: Vec<ArrayView3<'a, f64>>,
    pub masks: Option<Vec<HandInteractionMask>>,
    pub edits: Vec<Vec<&'a EditConstraint>>,
    pub streams: Vec<u64>,
}

/// Runs the reverse chain `t = T…1` of one stage for a batch and returns
/// the clean samples with their traces. Guidance is used in the body stage
/// only and needs `skeleton`.
pub fn sample_stage(
    model: &dyn X0Predictor,
    schedule: &DiffusionSchedule,
    inputs: &StageInputs<'_>,
    skeleton: &Skeleton,
    cfg: &SamplerConfig,
) -> Result<(Vec<Array3<f64>>, Vec<StageTrace>)> {
    let stage = model.stage();
    if let Some(steps) = model.steps() {
        if steps != schedule.steps() {
            return Err(invalid(format!(
                "{} model built for T = {steps}, schedule has T = {}",
                stage.name(),
                schedule.steps()
            )));
        }
    }
    let b = inputs.cond.len();
    if inputs.edits.len() != b || inputs.streams.len() != b {
        return Err(shape("stage inputs have inconsistent batch sizes"));
    }
    if stage == Stage::Hands && inputs.masks.as_ref().map(Vec::len) != Some(b) {
        return Err(invalid("hand stage needs one mask per sample"));
    }
    let guidance = cfg.guidance.as_ref().filter(|g| g.enabled && stage == Stage::Body);
    if let Some(g) = guidance {
        g.validate()?;
    }
    if let Some(c) = inputs.edits.iter().flatten().find(|c| c.stage != stage) {
        return Err(invalid(format!("{} edit passed to the {} stage", c.stage.name(), stage.name())));
    }
    let dim = |i: usize| inputs.cond[i].dim();

    let mut rngs: Vec<ChaCha8Rng> = inputs.streams.iter().map(|&s| stage_rng(cfg.seed, s, stage)).collect();
    let mut x: Vec<Array3<f64>> = (0..b).map(|i| standard_normal(&mut rngs[i], dim(i))).collect();
    let frozen: Vec<Array3<f64>> = (0..b).map(|i| standard_normal(&mut rngs[i], dim(i))).collect();
    let mut traces = vec![StageTrace::default(); b];

    let apply_edits = |x: &mut Array3<f64>, i: usize, t: usize| -> Result<()> {
        for c in &inputs.edits[i] {
            apply_edit_constraint(x, c, t, schedule, frozen[i].view())?;
        }
        Ok(())
    };

    for t in (1..=schedule.steps()).rev() {
        for (i, xi) in x.iter_mut().enumerate() {
            apply_edits(xi, i, t)?;
        }
        let views: Vec<ArrayView3<f64>> = x.iter().map(|a| a.view()).collect();
        let mut x0 = model.predict_x0(&views, t, &inputs.cond, inputs.masks.as_deref())?;
        for i in 0..b {
            let guide = |v: &Array3<f64>| -> Result<(Array3<f64>, f64)> {
                let g = guidance.expect("guidance configured");
                let masks = hand_masks_from_bodies(inputs.cond[i], v.view(), skeleton, cfg.mask_threshold)?;
                let out = apply_guidance(v.view(), inputs.cond[i], &masks, skeleton, g)?;
                let r = masked_arm_residual(out.view(), inputs.cond[i], &masks, skeleton, g)?;
                Ok((out, r))
            };
            let before = guidance.is_some_and(|g| g.placement == GuidancePlacement::BeforePosterior);
            if before {
                let (out, r) = guide(&x0[i])?;
                x0[i] = out;
                traces[i].arm_residual.push(r);
            }
            let noise = (!cfg.deterministic && t > 1).then(|| standard_normal(&mut rngs[i], dim(i)));
            let mut next = schedule.posterior_step(x[i].view(), x0[i].view(), t, noise.as_ref().map(|z| z.view()))?;
            if guidance.is_some() && !before {
                let (out, r) = guide(&next)?;
                next = out;
                traces[i].arm_residual.push(r);
            }
            x[i] = next;
        }
    }
    for (i, xi) in x.iter_mut().enumerate() {
        apply_edits(xi, i, 0)?;
    }
    Ok((x, traces))
}

/// Cascaded reactor synthesis: the body stage conditioned on the actor
/// body, then hand masks from the actor body and the synthesized reactor
/// body, then the hand stage conditioned on the actor hands and masks.
pub fn sample_reactive(
    body: &dyn X0Predictor,
    hands: &dyn X0Predictor,
    schedule: &DiffusionSchedule,
    requests: &[SampleRequest<'_>],
    skeleton: &Skeleton,
    cfg: &SamplerConfig,
) -> Result<Vec<ReactorSample>> {
    if body.stage() != Stage::Body || hands.stage() != Stage::Hands {
        return Err(invalid("sample_reactive needs a body model and a hand model"));
    }
    for r in requests {
        if r.actor.dim().1 != skeleton.num_joints() || r.actor.dim().2 != 3 {
            return Err(shape(format!(
                "actor {:?} does not match {} joints",
                r.actor.dim(),
                skeleton.num_joints()
            )));
        }
    }
    let select = |a: ArrayView3<f64>, joints: &[usize]| a.select(ndarray::Axis(1), joints);
    let hand_joints = skeleton.hand_joints();
    let actor_body: Vec<Array3<f64>> = requests.iter().map(|r| select(r.actor, skeleton.body_joints())).collect();
    let actor_hands: Vec<Array3<f64>> = requests.iter().map(|r| select(r.actor, &hand_joints)).collect();
    let streams: Vec<u64> = requests.iter().map(|r| r.stream).collect();
    let edits_for = |stage: Stage| -> Vec<Vec<&EditConstraint>> {
        requests
            .iter()
            .map(|r| r.edits.iter().filter(|c| c.stage == stage).collect())
            .collect()
    };

    let body_inputs = StageInputs {
        cond: actor_body.iter().map(|a| a.view()).collect(),
        masks: None,
        edits: edits_for(Stage::Body),
        streams: streams.clone(),
    };
    let (body_out, traces) = sample_stage(body, schedule, &body_inputs, skeleton, cfg)?;

    let masks = actor_body
        .iter()
        .zip(&body_out)
        .map(|(a, x)| hand_masks_from_bodies(a.view(), x.view(), skeleton, cfg.mask_threshold))
        .collect::<Result<Vec<_>>>()?;
    let hand_inputs = StageInputs {
        cond: actor_hands.iter().map(|a| a.view()).collect(),
        masks: Some(masks.clone()),
        edits: edits_for(Stage::Hands),
        streams,
    };
    let (hand_out, _) = sample_stage(hands, schedule, &hand_inputs, skeleton, cfg)?;

    let mut out = Vec::with_capacity(requests.len());
    for (i, r) in requests.iter().enumerate() {
        let mut full = Array3::zeros(r.actor.dim());
        for (k, &j) in skeleton.body_joints().iter().enumerate() {
            full.slice_mut(ndarray::s![.., j, ..]).assign(&body_out[i].slice(ndarray::s![.., k, ..]));
        }
        for (k, &j) in hand_joints.iter().enumerate() {
            full.slice_mut(ndarray::s![.., j, ..]).assign(&hand_out[i].slice(ndarray::s![.., k, ..]));
        }
        let world = r
            .transform
            .map(|tr| denormalize_reactor(full.view(), skeleton, tr))
            .transpose()?;
        out.push(ReactorSample {
            normalized: full,
            world,
            masks: masks[i].clone(),
            body_trace: traces[i].clone(),
        });
    }
    Ok(out)
}
