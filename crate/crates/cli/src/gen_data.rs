use std::fs;
use std::path::Path;

use remos_core::motion::{save_motion, SkeletonPreset};
use remos_core::synth::{generate_pair, window_starts, SynthConfig};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{Manifest, PairEntry, Split, WindowEntry, MANIFEST_FORMAT, MANIFEST_VERSION};
use crate::write_json;

pub fn synth_config(cfg: &RunConfig) -> CliResult<SynthConfig> {
    let d = SynthConfig::default();
    let preset = match cfg.raw("skeleton") {
        Some(name) => SkeletonPreset::parse(name)?,
        None => d.skeleton_preset,
    };
    let c = SynthConfig {
        seed: cfg.get_or("seed", d.seed)?,
        num_pairs: cfg.get_or("num_pairs", d.num_pairs)?,
        frames_per_pair: cfg.get_or("frames_per_pair", d.frames_per_pair)?,
        fps: cfg.get_or("fps", d.fps)?,
        skeleton_preset: preset,
        phase_lag: cfg.get_or("phase_lag", d.phase_lag)?,
        contact_episode_rate: cfg.get_or("contact_episode_rate", d.contact_episode_rate)?,
        noise_sigma: cfg.get_or("noise_sigma", d.noise_sigma)?,
        window_len: cfg.get_or("window_len", d.window_len)?,
        stride: cfg.get_or("stride", d.stride)?,
    };
    c.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(c)
}

pub fn run(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let synth = synth_config(cfg)?;
    cfg.finish()?;
    let motions = out.join("motions");
    fs::create_dir_all(&motions)?;
    let mut pairs = Vec::with_capacity(synth.num_pairs);
    let mut windows = Vec::new();
    for i in 0..synth.num_pairs {
        let pair = generate_pair(&synth, i)?;
        let actor = format!("motions/pair_{i:04}_actor.json");
        let reactor = format!("motions/pair_{i:04}_reactor.json");
        save_motion(pair.actor(), pair.skeleton(), &out.join(&actor))?;
        save_motion(pair.reactor(), pair.skeleton(), &out.join(&reactor))?;
        for start in window_starts(pair.num_frames(), synth.window_len, synth.stride) {
            windows.push(WindowEntry {
                pair: i,
                start,
                split: Split::Train,
            });
        }
        pairs.push(PairEntry {
            index: i,
            actor,
            reactor,
            frames: pair.num_frames(),
        });
    }
    let n_test = windows.len() / 4;
    let first_test = windows.len() - n_test;
    for w in &mut windows[first_test..] {
        w.split = Split::Test;
    }
    log::info!("{} pairs, {} train and {n_test} test windows", pairs.len(), first_test);
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        synth,
        pairs,
        windows,
    };
    write_json(&out.join("manifest.json"), &manifest)
}
