use std::sync::Arc;

use remos_core::denoiser::{DenoiserConfig, Stage};
use remos_core::diffusion::{OracleDenoiser, SamplerConfig};
use remos_core::losses::total_value;
use remos_core::motion::compute_hand_masks;
use remos_core::synth::{make_dataset, Dataset, SynthConfig};
use remos_core::trainer::{
    epoch_curve, ground_truth_masks, load_checkpoint, save_checkpoint, synthesized_masks, Checkpoint, MaskPolicy,
    StageData, TrainConfig, Trainer,
};
use remos_core::CoreError;

fn dataset(pairs: usize) -> Dataset {
    make_dataset(&SynthConfig {
        num_pairs: pairs,
        frames_per_pair: 40,
        contact_episode_rate: 0.6,
        ..SynthConfig::default()
    })
    .unwrap()
}

/// A small network so the loop tests stay fast.
fn small_config(stage: Stage, joints: usize) -> TrainConfig {
    let mut cfg = TrainConfig::desk(stage, joints, 20);
    cfg.denoiser = DenoiserConfig {
        latent_dim: 16,
        layers: 1,
        ..cfg.denoiser
    };
    cfg.batch_size = 2;
    cfg.seed = 11;
    cfg
}

fn body_data(ds: &Dataset) -> StageData {
    StageData::body(&ds.train, ds.skeleton.clone()).unwrap()
}

#[test]
fn training_is_deterministic() {
    let ds = dataset(4);
    let data = body_data(&ds);
    let run = || {
        let mut cfg = small_config(Stage::Body, ds.skeleton.num_body_joints());
        cfg.max_steps = Some(5);
        let mut t = Trainer::new(cfg).unwrap();
        t.run(&data, None).unwrap();
        t.checkpoint()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.step, 5);
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
}

#[test]
fn resumed_training_matches_uninterrupted_run() {
    let ds = dataset(4);
    let data = body_data(&ds);
    let cfg = small_config(Stage::Body, ds.skeleton.num_body_joints());
    let mut straight = Trainer::new(cfg.clone()).unwrap();
    straight.run(&data, Some(20)).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("body.ckpt");
    let mut first = Trainer::new(cfg).unwrap();
    first.run(&data, Some(10)).unwrap();
    save_checkpoint(&path, &first.checkpoint()).unwrap();
    let mut resumed = Trainer::from_checkpoint(&load_checkpoint(&path, Some(Stage::Body)).unwrap()).unwrap();
    resumed.run(&data, Some(20)).unwrap();

    assert_eq!(resumed.checkpoint(), straight.checkpoint());
    let tail: Vec<f64> = straight.log()[10..].iter().map(|r| r.loss.total).collect();
    let cont: Vec<f64> = resumed.log().iter().map(|r| r.loss.total).collect();
    assert_eq!(tail, cont);
}

#[test]
fn checkpoint_round_trip_and_errors() {
    let ds = dataset(4);
    let mut cfg = small_config(Stage::Body, ds.skeleton.num_body_joints());
    cfg.max_steps = Some(2);
    let mut t = Trainer::new(cfg).unwrap();
    t.run(&body_data(&ds), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    save_checkpoint(&p1, &t.checkpoint()).unwrap();
    let loaded = load_checkpoint(&p1, None).unwrap();
    save_checkpoint(&p2, &loaded).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert_eq!(loaded.to_net().unwrap().params().to_named(), t.net().params().to_named());

    let wrong = load_checkpoint(&p1, Some(Stage::Hands)).unwrap_err();
    assert!(matches!(wrong, CoreError::Checkpoint(ref m) if m.contains("expected a hands checkpoint")), "{wrong}");

    let text = std::fs::read_to_string(&p1).unwrap();
    std::fs::write(&p2, text.replacen("\"version\":1", "\"version\":99", 1)).unwrap();
    assert!(matches!(load_checkpoint(&p2, None), Err(CoreError::Checkpoint(m)) if m.contains("version 99")));
    std::fs::write(&p2, &text[..text.len() / 2]).unwrap();
    assert!(matches!(load_checkpoint(&p2, None), Err(CoreError::Checkpoint(_))));
}

#[test]
fn log_composite_matches_weights_and_foot_activation() {
    let mut ds = dataset(2);
    // The generated feet never rest; mark every frame as a contact so the
    // foot term is non-zero once active.
    for w in &mut ds.train {
        w.foot_contacts.fill(true);
    }
    let data = body_data(&ds);
    let mut cfg = small_config(Stage::Body, ds.skeleton.num_body_joints());
    // 3 training windows, batch 2: two steps per epoch.
    cfg.weights.foot_start_epoch = 1;
    cfg.lr_schedule.step_size = 1;
    cfg.epochs = 2;
    let mut t = Trainer::new(cfg.clone()).unwrap();
    t.run(&data, None).unwrap();
    let log = t.log();
    assert_eq!(log.len(), 4);
    for r in log {
        let expected = total_value(&r.loss, &cfg.weights, r.epoch as usize);
        assert!((r.loss.total - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        assert!(r.grad_norm.is_finite());
        if r.epoch == 0 {
            assert_eq!(r.loss.foot, 0.0);
            assert_eq!(r.lr, cfg.adam.lr);
        } else {
            assert!(r.loss.foot > 0.0);
            assert_eq!(r.lr, cfg.adam.lr * 0.99);
        }
    }
    assert_eq!(epoch_curve(log).len(), 2);
}

#[test]
fn loss_decreases_over_200_steps() {
    let ds = dataset(8);
    let data = body_data(&ds);
    let mut cfg = TrainConfig::desk(Stage::Body, ds.skeleton.num_body_joints(), 20);
    cfg.batch_size = 4;
    cfg.max_steps = Some(200);
    let mut t = Trainer::new(cfg).unwrap();
    t.run(&data, None).unwrap();
    let mean = |r: &[remos_core::trainer::LogRecord]| r.iter().map(|x| x.loss.total).sum::<f64>() / r.len() as f64;
    let (head, tail) = (mean(&t.log()[..20]), mean(&t.log()[180..]));
    assert!(tail < head, "{head} -> {tail}");
}

#[test]
fn divergence_keeps_last_good_state() {
    let ds = dataset(2);
    let data = body_data(&ds);
    let mut cfg = small_config(Stage::Body, ds.skeleton.num_body_joints());
    // A step this large overflows the parameters after one update.
    cfg.adam.lr = 1e300;
    let mut t = Trainer::new(cfg).unwrap();
    let err = loop {
        let good = t.checkpoint();
        match t.run(&data, Some(t.step() + 1)) {
            Ok(()) => assert!(t.step() < 10, "training never diverged"),
            Err(e) => {
                assert_eq!(t.checkpoint(), good);
                break e;
            }
        }
    };
    assert!(matches!(err, CoreError::Diverged { .. }), "{err}");
}

#[test]
fn hand_stage_mask_policies() {
    let ds = dataset(3);
    let sk = ds.skeleton.clone();
    let gt = ground_truth_masks(&ds.train, 0.1).unwrap();
    for (w, m) in ds.train.iter().zip(&gt) {
        assert_eq!(&compute_hand_masks(&w.pair, 0.1).unwrap(), m);
    }
    assert!(gt.iter().any(|m| m.reactor.iter().any(|&b| b)));

    let oracle = OracleDenoiser {
        stage: Stage::Body,
        targets: ds.train.iter().map(|w| w.pair.reactor().select(sk.body_joints())).collect(),
    };
    let schedule = remos_core::diffusion::make_schedule(20, 2e-4, 2e-2).unwrap();
    let sampler = SamplerConfig {
        deterministic: true,
        mask_threshold: 0.1,
        ..SamplerConfig::new(0)
    };
    let synth = synthesized_masks(&ds.train, &sk, &oracle, &schedule, &sampler, ds.train.len()).unwrap();
    assert_eq!(synth, gt);

    let mut cfg = small_config(Stage::Hands, sk.num_hand_joints());
    cfg.mask_policy = MaskPolicy::Synthesized;
    assert!(Trainer::new(cfg.clone()).is_err());
    cfg.body_checkpoint = Some("body.ckpt".into());
    cfg.max_steps = Some(2);
    let mut t = Trainer::new(cfg).unwrap();
    t.run(&StageData::hands(&ds.train, Arc::clone(&sk), gt).unwrap(), None).unwrap();
    let bytes = t.checkpoint().to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes, Some(Stage::Hands)).unwrap();
    assert_eq!(back.config.mask_policy, MaskPolicy::Synthesized);
    assert_eq!(back.config.body_checkpoint.as_deref(), Some("body.ckpt"));
}

#[test]
fn mismatched_data_is_rejected() {
    let ds = dataset(2);
    let mut t = Trainer::new(small_config(Stage::Hands, ds.skeleton.num_hand_joints())).unwrap();
    assert!(t.run(&body_data(&ds), None).is_err());
    let bad = TrainConfig {
        batch_size: 0,
        ..small_config(Stage::Body, 11)
    };
    assert!(Trainer::new(bad).is_err());
}
