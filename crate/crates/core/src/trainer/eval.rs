use ndarray::{Array3, ArrayView3};

use crate::diffusion::{sample_stage, DiffusionSchedule, SamplerConfig, StageInputs, X0Predictor};
use crate::error::{invalid, Result};
use crate::metrics::mpjpe;
use crate::motion::Skeleton;
use crate::synth::Window;

/// Samples reactor bodies for `windows` with the body stage alone, `chunk`
/// windows per batch. Window `i` uses random stream `i`.
pub fn sample_body_windows(
    model: &dyn X0Predictor,
    schedule: &DiffusionSchedule,
    windows: &[Window],
    skeleton: &Skeleton,
    sampler: &SamplerConfig,
    chunk: usize,
) -> Result<Vec<Array3<f64>>> {
    if chunk == 0 {
        return Err(invalid("chunk size must be >= 1"));
    }
    let actors: Vec<Array3<f64>> = windows.iter().map(|w| w.pair.actor().select(skeleton.body_joints())).collect();
    let mut out = Vec::with_capacity(windows.len());
    for (c, group) in actors.chunks(chunk).enumerate() {
        let inputs = StageInputs {
            cond: group.iter().map(|a| a.view()).collect(),
            masks: None,
            edits: vec![Vec::new(); group.len()],
            streams: (0..group.len()).map(|i| (c * chunk + i) as u64).collect(),
        };
        out.extend(sample_stage(model, schedule, &inputs, skeleton, sampler)?.0);
    }
    Ok(out)
}

/// Mean MPJPE (mm) over paired motions.
pub fn mean_mpjpe(gt: &[ArrayView3<f64>], pred: &[ArrayView3<f64>]) -> Result<f64> {
    if gt.len() != pred.len() || gt.is_empty() {
        return Err(invalid("need equally many non-empty ground-truth and predicted motions"));
    }
    let mut total = 0.0;
    for (a, b) in gt.iter().zip(pred) {
        total += mpjpe(*a, *b)?;
    }
    Ok(total / gt.len() as f64)
}

/// Per-frame, per-joint mean of the reactor bodies of `windows`.
pub fn mean_body_baseline(windows: &[Window], skeleton: &Skeleton) -> Result<Array3<f64>> {
    let first = windows.first().ok_or_else(|| invalid("no windows"))?;
    let mut acc = Array3::zeros(first.pair.reactor().select(skeleton.body_joints()).dim());
    for w in windows {
        acc += &w.pair.reactor().select(skeleton.body_joints());
    }
    Ok(acc / windows.len() as f64)
}
