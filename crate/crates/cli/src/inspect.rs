//! `inspect`: CSV and text dumps for external tools.
//!
//! | flag            | keys                                   | file              |
//! |-----------------|----------------------------------------|-------------------|
//! | `--schedule`    | `checkpoint` or `steps`, `beta_start`, `beta_end` | `schedule.csv` |
//! | `--masks`       | `actor`, `reactor`, `mask_threshold`   | `masks.csv`       |
//! | `--trajectory`  | `motion`, `joints` (comma list)        | `trajectory.csv`  |
//! | `--loss-curve`  | `log`                                  | `loss_curve.csv`  |
//! | `--dump-config` | `checkpoint` (optional)                | `config.txt`      |

use std::path::Path;
use std::sync::Arc;

use remos_core::diffusion::{make_schedule, DiffusionSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS};
use remos_core::motion::{compute_hand_masks, InteractionPair, MotionSequence, Role, Side, DEFAULT_MASK_THRESHOLD};
use remos_core::trainer::{load_checkpoint, Checkpoint, LogRecord};

use crate::config::RunConfig;
use crate::error::{input, CliError, CliResult};
use crate::sample::load_any_motion;

#[derive(Debug, Clone, Copy, Default)]
pub struct InspectFlags {
    pub schedule: bool,
    pub masks: bool,
    pub trajectory: bool,
    pub loss_curve: bool,
    pub dump_config: bool,
}

fn schedule_of(cfg: &RunConfig, ckpt: Option<&Checkpoint>) -> CliResult<DiffusionSchedule> {
    match ckpt {
        Some(c) => Ok(c.config.schedule()?),
        None => {
            let steps = cfg.get_or("steps", DEFAULT_STEPS)?;
            let start = cfg.get_or("beta_start", DEFAULT_BETA_START)?;
            let end = cfg.get_or("beta_end", DEFAULT_BETA_END)?;
            make_schedule(steps, start, end).map_err(|e| CliError::Config(e.to_string()))
        }
    }
}

fn write_schedule(path: &Path, s: &DiffusionSchedule) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "beta", "alpha", "alpha_bar"])?;
    for t in 1..=s.steps() {
        w.write_record([
            t.to_string(),
            s.beta(t).to_string(),
            s.alpha(t).to_string(),
            s.alpha_bar(t).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_masks(cfg: &RunConfig, path: &Path) -> CliResult<()> {
    let (actor, sk) = load_any_motion(&cfg.require_path("actor")?)?;
    let (reactor, sk_r) = load_any_motion(&cfg.require_path("reactor")?)?;
    if sk != sk_r {
        return Err(input("actor and reactor skeletons differ"));
    }
    let threshold = cfg.get_or("mask_threshold", DEFAULT_MASK_THRESHOLD)?;
    let with_role = |m: &MotionSequence, r| MotionSequence::new(m.fps(), m.positions().clone(), r);
    let pair = InteractionPair::new(with_role(&actor, Role::Actor)?, with_role(&reactor, Role::Reactor)?, Arc::clone(&sk))?;
    let masks = compute_hand_masks(&pair, threshold)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["frame", "side", "actor_active", "reactor_active"])?;
    for f in 0..masks.num_frames() {
        for side in Side::BOTH {
            w.write_record([
                f.to_string(),
                format!("{side:?}").to_lowercase(),
                u8::from(masks.actor_side(&sk, f, side)).to_string(),
                u8::from(masks.reactor_side(&sk, f, side)).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_trajectory(cfg: &RunConfig, path: &Path) -> CliResult<()> {
    let (motion, sk) = load_any_motion(&cfg.require_path("motion")?)?;
    let joints: Vec<usize> = match cfg.raw("joints") {
        Some(list) => list
            .split(',')
            .map(|n| {
                let n = n.trim();
                sk.joint_index(n).ok_or_else(|| input(format!("unknown joint `{n}`")))
            })
            .collect::<CliResult<_>>()?,
        None => (0..sk.num_joints()).collect(),
    };
    let pos = motion.positions();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["frame", "joint", "x", "y", "z"])?;
    for f in 0..motion.num_frames() {
        for &j in &joints {
            w.write_record([
                f.to_string(),
                sk.joint_names()[j].clone(),
                pos[[f, j, 0]].to_string(),
                pos[[f, j, 1]].to_string(),
                pos[[f, j, 2]].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_loss_curve(cfg: &RunConfig, path: &Path) -> CliResult<()> {
    let log_path = cfg.require_path("log")?;
    let text = std::fs::read_to_string(&log_path).map_err(|e| input(format!("{}: {e}", log_path.display())))?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "step", "lr", "total", "recon", "reaction", "vel", "acc", "bone", "foot", "grad_norm"])?;
    for (no, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: LogRecord = serde_json::from_str(line)
            .map_err(|e| input(format!("{}:{}: {e}", log_path.display(), no + 1)))?;
        let l = &r.loss;
        let row = [r.lr, l.total, l.recon, l.reaction, l.vel, l.acc, l.bone, l.foot, r.grad_norm];
        let mut rec = vec![r.epoch.to_string(), r.step.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(cfg: &RunConfig, flags: InspectFlags, out: Option<&Path>) -> CliResult<()> {
    if !(flags.schedule || flags.masks || flags.trajectory || flags.loss_curve || flags.dump_config) {
        return Err(CliError::Config(
            "inspect needs at least one of --schedule, --masks, --trajectory, --loss-curve, --dump-config".into(),
        ));
    }
    let ckpt = cfg.path("checkpoint").map(|p| load_checkpoint(&p, None)).transpose()?;
    let out = out.unwrap_or(Path::new("."));
    std::fs::create_dir_all(out)?;
    if flags.schedule {
        write_schedule(&out.join("schedule.csv"), &schedule_of(cfg, ckpt.as_ref())?)?;
    }
    if flags.masks {
        write_masks(cfg, &out.join("masks.csv"))?;
    }
    if flags.trajectory {
        write_trajectory(cfg, &out.join("trajectory.csv"))?;
    }
    if flags.loss_curve {
        write_loss_curve(cfg, &out.join("loss_curve.csv"))?;
    }
    if flags.dump_config {
        let mut text = cfg.dump();
        if let Some(c) = &ckpt {
            text.push_str(&format!("# checkpoint configuration\n# {}\n", serde_json::to_string(&c.config)?));
        }
        std::fs::write(out.join("config.txt"), text)?;
    }
    cfg.finish()
}
