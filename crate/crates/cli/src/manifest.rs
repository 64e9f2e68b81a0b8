//! Dataset manifest written by `gen-data`.
//!
//! ```text
//! { "format": "remos-manifest", "version": 1,
//!   "synth": { ...generator settings... },
//!   "pairs": [ { "index": 0, "actor": "motions/pair_0000_actor.json",
//!                "reactor": "motions/pair_0000_reactor.json", "frames": 100 } ],
//!   "windows": [ { "pair": 0, "start": 0, "split": "train" } ] }
//! ```
//!
//! Motion paths are relative to the manifest.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use remos_core::motion::{load_motion, InteractionPair, Skeleton};
use remos_core::synth::{windows_of_pair, SynthConfig, Window};
use serde::{Deserialize, Serialize};

use crate::error::{input, CliResult};

pub const MANIFEST_FORMAT: &str = "remos-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairEntry {
    pub index: usize,
    pub actor: String,
    pub reactor: String,
    pub frames: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowEntry {
    pub pair: usize,
    pub start: usize,
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub synth: SynthConfig,
    pub pairs: Vec<PairEntry>,
    pub windows: Vec<WindowEntry>,
}

pub struct LoadedData {
    pub skeleton: Arc<Skeleton>,
    pub train: Vec<Window>,
    pub test: Vec<Window>,
    pub window_len: usize,
}

impl LoadedData {
    pub fn split(&self, split: Split) -> &[Window] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

pub fn read_manifest(path: &Path) -> CliResult<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", path.display())))?;
    if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
        return Err(input(format!(
            "{}: expected {MANIFEST_FORMAT} v{MANIFEST_VERSION}, found {} v{}",
            path.display(),
            m.format,
            m.version
        )));
    }
    Ok(m)
}

/// Loads every pair listed in the manifest and cuts the listed windows.
pub fn load_data(path: &Path) -> CliResult<LoadedData> {
    let m = read_manifest(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let skeleton = Arc::new(m.synth.skeleton_preset.build());
    let len = m.synth.window_len;
    let mut by_key: HashMap<(usize, usize), Window> = HashMap::new();
    for p in &m.pairs {
        let actor = load_motion(&base.join(&p.actor), &skeleton)?;
        let reactor = load_motion(&base.join(&p.reactor), &skeleton)?;
        let pair = InteractionPair::new(actor, reactor, skeleton.clone())?;
        if pair.num_frames() != p.frames {
            return Err(input(format!("pair {} has {} frames, manifest says {}", p.index, pair.num_frames(), p.frames)));
        }
        for w in windows_of_pair(&pair, p.index, len, 1)? {
            by_key.insert((p.index, w.start), w);
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for e in &m.windows {
        let w = by_key
            .get(&(e.pair, e.start))
            .ok_or_else(|| input(format!("window (pair {}, start {}) is out of range", e.pair, e.start)))?
            .clone();
        match e.split {
            Split::Train => train.push(w),
            Split::Test => test.push(w),
        }
    }
    Ok(LoadedData {
        skeleton,
        train,
        test,
        window_len: len,
    })
}
