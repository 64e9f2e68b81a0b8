use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use remos_core::denoiser::Stage;
use remos_core::diffusion::SamplerConfig;
use remos_core::losses::ReconNorm;
use remos_core::trainer::{
    epoch_curve, ground_truth_masks, load_checkpoint, save_checkpoint, synthesized_masks, ContactSource,
    MaskPolicy, StageData, TrainConfig, Trainer,
};
use remos_core::CoreError;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::load_data;

fn parse_recon(s: &str) -> CliResult<ReconNorm> {
    match s {
        "l2" => Ok(ReconNorm::L2),
        "squared" => Ok(ReconNorm::Squared),
        o => Err(CliError::Config(format!("recon_norm must be l2 or squared, got `{o}`"))),
    }
}

fn parse_mask_policy(s: &str) -> CliResult<MaskPolicy> {
    match s {
        "ground_truth" => Ok(MaskPolicy::GroundTruth),
        "synthesized" => Ok(MaskPolicy::Synthesized),
        o => Err(CliError::Config(format!("mask_policy must be ground_truth or synthesized, got `{o}`"))),
    }
}

fn parse_contacts(s: &str) -> CliResult<ContactSource> {
    match s {
        "ground_truth" => Ok(ContactSource::GroundTruth),
        "synthesized" => Ok(ContactSource::Synthesized),
        o => Err(CliError::Config(format!("contact_source must be ground_truth or synthesized, got `{o}`"))),
    }
}

/// Training configuration from `cfg` on top of the desk defaults.
pub fn train_config(cfg: &RunConfig, stage: Stage, joints: usize, window: usize) -> CliResult<TrainConfig> {
    let mut c = TrainConfig::desk(stage, joints, window);
    let d = &mut c.denoiser;
    d.latent_dim = cfg.get_or("latent_dim", d.latent_dim)?;
    d.layers = cfg.get_or("layers", d.layers)?;
    d.heads = cfg.get_or("heads", d.heads)?;
    d.steps = cfg.get_or("steps", d.steps)?;
    d.ffn_mult = cfg.get_or("ffn_mult", d.ffn_mult)?;
    d.bn_momentum = cfg.get_or("bn_momentum", d.bn_momentum)?;
    c.batch_size = cfg.get_or("batch_size", c.batch_size)?;
    c.epochs = cfg.get_or("epochs", c.epochs)?;
    c.max_steps = cfg.get("max_steps")?;
    c.adam.lr = cfg.get_or("lr", c.adam.lr)?;
    c.lr_schedule.step_size = cfg.get_or("lr_step_size", c.lr_schedule.step_size)?;
    c.lr_schedule.gamma = cfg.get_or("lr_gamma", c.lr_schedule.gamma)?;
    c.seed = cfg.get_or("seed", c.seed)?;
    c.beta_start = cfg.get_or("beta_start", c.beta_start)?;
    c.beta_end = cfg.get_or("beta_end", c.beta_end)?;
    let w = &mut c.weights;
    w.lambda_c = cfg.get_or("lambda_c", w.lambda_c)?;
    w.lambda_r = cfg.get_or("lambda_r", w.lambda_r)?;
    w.lambda_k = cfg.get_or("lambda_k", w.lambda_k)?;
    w.lambda_v = cfg.get_or("lambda_v", w.lambda_v)?;
    w.lambda_a = cfg.get_or("lambda_a", w.lambda_a)?;
    w.lambda_b = cfg.get_or("lambda_b", w.lambda_b)?;
    w.lambda_f = cfg.get_or("lambda_f", w.lambda_f)?;
    w.foot_start_epoch = cfg.get_or("foot_start_epoch", w.foot_start_epoch)?;
    if let Some(s) = cfg.raw("recon_norm") {
        c.recon_norm = parse_recon(s)?;
    }
    if let Some(s) = cfg.raw("mask_policy") {
        c.mask_policy = parse_mask_policy(s)?;
    }
    if let Some(s) = cfg.raw("contact_source") {
        c.contact_source = parse_contacts(s)?;
    }
    c.body_checkpoint = cfg.raw("body_checkpoint").map(String::from);
    c.mask_threshold = cfg.get_or("mask_threshold", c.mask_threshold)?;
    c.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(c)
}

pub fn run(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let data_path = cfg.require_path("data")?;
    let stage = Stage::parse(cfg.raw("stage").unwrap_or("body")).map_err(|e| CliError::Config(e.to_string()))?;
    let resume: Option<PathBuf> = cfg.path("resume");
    let chunk: usize = cfg.get_or("sample_chunk", 16)?;
    let data = load_data(&data_path)?;
    let sk = data.skeleton.clone();
    let joints = match stage {
        Stage::Body => sk.num_body_joints(),
        Stage::Hands => sk.num_hand_joints(),
    };
    let mut trainer = match &resume {
        Some(p) => {
            // The checkpoint's own configuration wins, apart from the budget.
            train_config(cfg, stage, joints, data.window_len)?;
            let mut ckpt = load_checkpoint(p, Some(stage))?;
            if let Some(m) = cfg.get::<u64>("max_steps")? {
                ckpt.config.max_steps = Some(m);
            }
            if let Some(e) = cfg.get::<usize>("epochs")? {
                ckpt.config.epochs = e;
            }
            Trainer::from_checkpoint(&ckpt)?
        }
        None => Trainer::new(train_config(cfg, stage, joints, data.window_len)?)?,
    };
    cfg.finish()?;
    if trainer.config().denoiser.window != data.window_len {
        return Err(CliError::Config(format!(
            "model window {} differs from the data window {}",
            trainer.config().denoiser.window,
            data.window_len
        )));
    }
    let tc = trainer.config().clone();
    let stage_data = match stage {
        Stage::Body => StageData::body(&data.train, sk.clone())?,
        Stage::Hands => {
            let masks = match tc.mask_policy {
                MaskPolicy::GroundTruth => ground_truth_masks(&data.train, tc.mask_threshold)?,
                MaskPolicy::Synthesized => {
                    let path = tc.body_checkpoint.as_deref().expect("validated");
                    let body = load_checkpoint(Path::new(path), Some(Stage::Body))?;
                    let net = body.to_net()?;
                    let schedule = body.config.schedule()?;
                    let mut sampler = SamplerConfig::new(tc.seed);
                    sampler.mask_threshold = tc.mask_threshold;
                    synthesized_masks(&data.train, &sk, &net, &schedule, &sampler, chunk)?
                }
            };
            StageData::hands(&data.train, sk.clone(), masks)?
        }
    };

    fs::create_dir_all(out)?;
    let already = trainer.log().len();
    let result = trainer.run(&stage_data, None);
    let name = stage.name();
    save_checkpoint(&out.join(format!("{name}.ckpt")), &trainer.checkpoint())?;
    let log_path = out.join(format!("{name}_log.jsonl"));
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)?;
    for r in &trainer.log()[already..] {
        writeln!(log, "{}", r.to_line())?;
    }
    let mut curve = csv::Writer::from_path(out.join(format!("{name}_loss.csv")))?;
    curve.write_record(["epoch", "mean_total"])?;
    for (e, v) in epoch_curve(trainer.log()) {
        curve.write_record([e.to_string(), v.to_string()])?;
    }
    curve.flush()?;
    match result {
        Err(CoreError::Diverged { step, message }) => {
            log::error!("stopped at step {step}; last good state saved");
            Err(CoreError::Diverged { step, message }.into())
        }
        other => Ok(other?),
    }
}
