use std::sync::Arc;

use ndarray::{s, Array2};

use super::generator::{generate_with_skeleton, SynthConfig};
use crate::error::Result;
use crate::motion::{
    detect_foot_contacts, normalize_pair, InteractionPair, NormalizationTransform, Skeleton,
    DEFAULT_HEIGHT_EPS, DEFAULT_SPEED_EPS,
};

/// A normalized fixed-length training window cut from one generated pair.
#[derive(Debug, Clone)]
pub struct Window {
    pub pair_index: usize,
    pub start: usize,
    pub pair: InteractionPair,
    pub transform: NormalizationTransform,
    /// Ground-truth reactor foot contacts, detected on the whole world-space
    /// sequence and sliced to the window.
    pub foot_contacts: Array2<bool>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub skeleton: Arc<Skeleton>,
    pub train: Vec<Window>,
    pub test: Vec<Window>,
}

impl Dataset {
    pub fn window_len(&self) -> usize {
        self.train
            .first()
            .or(self.test.first())
            .map_or(0, |w| w.pair.num_frames())
    }
}

/// Window start frames for a sequence of `frames` frames.
pub fn window_starts(frames: usize, len: usize, stride: usize) -> Vec<usize> {
    if frames < len {
        return Vec::new();
    }
    (0..=frames - len).step_by(stride.max(1)).collect()
}

/// Cuts and normalizes the windows of one world-space pair.
pub fn windows_of_pair(
    pair: &InteractionPair,
    pair_index: usize,
    len: usize,
    stride: usize,
) -> Result<Vec<Window>> {
    let contacts = detect_foot_contacts(pair.reactor(), pair.skeleton(), DEFAULT_HEIGHT_EPS, DEFAULT_SPEED_EPS)?;
    window_starts(pair.num_frames(), len, stride)
        .into_iter()
        .map(|start| {
            let (pair_n, transform) = normalize_pair(&pair.window(start, len)?)?;
            Ok(Window {
                pair_index,
                start,
                pair: pair_n,
                transform,
                foot_contacts: contacts.slice(s![start..start + len, ..]).to_owned(),
            })
        })
        .collect()
}

/// Generates every pair, cuts windows, and splits them 3:1.
///
/// Windows are ordered by (pair index, start); the last quarter (rounded
/// down) forms the test set, so with many pairs the test windows come from
/// held-out pairs.
pub fn make_dataset(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let skeleton = Arc::new(config.skeleton_preset.build());
    let mut all = Vec::new();
    for i in 0..config.num_pairs {
        let pair = generate_with_skeleton(config, i, skeleton.clone())?;
        all.extend(windows_of_pair(&pair, i, config.window_len, config.stride)?);
    }
    let test = all.split_off(all.len() - all.len() / 4);
    Ok(Dataset {
        skeleton,
        train: all,
        test,
    })
}
