use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use remos_core::diffusion::make_schedule;
use remos_core::motion::{read_motion_document, Role, SkeletonPreset};
use serde_json::Value;
use tempfile::TempDir;

fn remos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_remos"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = remos(args);
    assert!(
        o.status.success(),
        "remos {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

const MODEL: [&str; 6] = ["steps=10", "latent_dim=8", "layers=1", "heads=2", "batch_size=2", "max_steps=2"];

/// Data with one 20-frame window per pair plus both trained stages.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let data = dir.path().join("data");
        ok(&["gen-data", "--out", &s(&data), "--seed", "5", "num_pairs=4", "frames_per_pair=20"]);
        let manifest = format!("data={}", s(&data.join("manifest.json")));
        for stage in ["body", "hands"] {
            let mut args = vec!["train", "--out", dir.path().to_str().unwrap(), "--seed", "1"];
            let st = format!("stage={stage}");
            args.push(&st);
            args.push(&manifest);
            args.extend(MODEL);
            ok(&args);
        }
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn ckpts(&self) -> [String; 2] {
        [
            format!("body_checkpoint={}", s(&self.path("body.ckpt"))),
            format!("hands_checkpoint={}", s(&self.path("hands.ckpt"))),
        ]
    }
}

fn positions(path: &Path) -> Vec<f64> {
    let doc = read_motion_document(path).unwrap();
    doc.positions.iter().flatten().flatten().copied().collect()
}

#[test]
fn gen_train_sample_pipeline_emits_valid_reactor() {
    let fx = Fixture::new();
    assert!(fx.path("body_log.jsonl").exists() && fx.path("hands_loss.csv").exists());
    let actor = fx.path("data/motions/pair_0000_actor.json");
    let [b, h] = fx.ckpts();
    let out = fx.path("sample");
    let a = format!("actor={}", s(&actor));
    ok(&["sample", "--out", &s(&out), "--seed", "3", &a, &b, &h]);

    let sk = SkeletonPreset::Mini.build();
    let doc = read_motion_document(&out.join("reactor.json")).unwrap();
    let seq = doc.to_sequence(&sk, &out.join("reactor.json")).unwrap();
    assert_eq!(seq.role(), Role::Reactor);
    assert_eq!(seq.num_frames(), 20);
    assert!(seq.positions().iter().all(|v| v.is_finite()));

    let again = fx.path("sample2");
    ok(&["sample", "--out", &s(&again), "--seed", "3", &a, &b, &h]);
    assert_eq!(
        fs::read(out.join("reactor.json")).unwrap(),
        fs::read(again.join("reactor.json")).unwrap()
    );
}

#[test]
fn full_coverage_edit_reproduces_the_reference() {
    let fx = Fixture::new();
    let sk = SkeletonPreset::Mini.build();
    let names = |js: &[usize]| js.iter().map(|&j| sk.joint_names()[j].clone()).collect::<Vec<_>>();
    let constraint = serde_json::json!({
        "constraints": [
            { "kind": "pose-completion", "stage": "body",
              "joints": names(sk.body_joints()), "reference": "data/motions/pair_0001_reactor.json" },
            { "kind": "pose-completion", "stage": "hands",
              "joints": names(&sk.hand_joints()), "reference": "data/motions/pair_0001_reactor.json" }
        ]
    });
    let cpath = fx.path("constraint.json");
    fs::write(&cpath, constraint.to_string()).unwrap();
    let [b, h] = fx.ckpts();
    let out = fx.path("edit");
    ok(&[
        "edit",
        "--out",
        &s(&out),
        &format!("actor={}", s(&fx.path("data/motions/pair_0001_actor.json"))),
        &format!("constraint={}", s(&cpath)),
        &b,
        &h,
    ]);
    let got = positions(&out.join("reactor.json"));
    let want = positions(&fx.path("data/motions/pair_0001_reactor.json"));
    assert_eq!(got.len(), want.len());
    let worst = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-9, "max deviation {worst}");
}

#[test]
fn eval_of_a_file_against_itself_is_zero() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    ok(&["gen-data", "--out", &s(&data), "num_pairs=1", "frames_per_pair=60"]);
    let f = s(&data.join("motions/pair_0000_reactor.json"));
    let out = dir.path().join("eval");
    ok(&["eval", "--out", &s(&out), &format!("reference={f}"), &format!("prediction={f}")]);
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    let m = &report["metrics"];
    assert_eq!(m["mpjpe_mm"]["value"].as_f64().unwrap(), 0.0);
    assert_eq!(m["mpjve_mm"]["value"].as_f64().unwrap(), 0.0);
    assert!(m["fid"]["value"].as_f64().unwrap().abs() < 1e-6, "{m}");
    assert!(report["config"]["reference"].is_string());
}

#[test]
fn dataset_eval_reports_all_metrics() {
    let fx = Fixture::new();
    let [b, h] = fx.ckpts();
    let out = fx.path("eval");
    let d = format!("data={}", s(&fx.path("data/manifest.json")));
    ok(&["eval", "--out", &s(&out), &d, &b, &h, "split=train", "repeats=2", "feature_dim=2"]);
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    for k in ["mpjpe_mm", "mpjpe_body_mm", "mpjpe_hands_mm", "fid", "fid_body", "fid_hands", "diversity", "multimodality"] {
        assert!(report["metrics"][k]["value"].as_f64().unwrap().is_finite(), "{k}");
    }
    assert!(report["metrics"]["multimodality"]["ci95"].is_number());
}

#[test]
fn inspect_schedule_matches_make_schedule_exactly() {
    let dir = TempDir::new().unwrap();
    ok(&["inspect", "--schedule", "--out", &s(dir.path()), "steps=50", "beta_start=0.001", "beta_end=0.05"]);
    let want = make_schedule(50, 0.001, 0.05).unwrap();
    let mut rdr = csv::Reader::from_path(dir.path().join("schedule.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 50);
    for row in rows {
        let t: usize = row[0].parse().unwrap();
        assert_eq!(row[1].parse::<f64>().unwrap(), want.beta(t));
        assert_eq!(row[2].parse::<f64>().unwrap(), want.alpha(t));
        assert_eq!(row[3].parse::<f64>().unwrap(), want.alpha_bar(t));
    }
}

#[test]
fn inspect_exports_trajectories_masks_and_loss_curves() {
    let fx = Fixture::new();
    let out = fx.path("inspect");
    let m = |k: &str| format!("{k}={}", s(&fx.path(&format!("data/motions/pair_0000_{k}.json"))));
    ok(&[
        "inspect",
        "--trajectory",
        "--masks",
        "--loss-curve",
        "--dump-config",
        "--out",
        &s(&out),
        &format!("motion={}", s(&fx.path("data/motions/pair_0000_actor.json"))),
        "joints=l_wrist,r_wrist",
        &m("actor"),
        &m("reactor"),
        &format!("log={}", s(&fx.path("body_log.jsonl"))),
    ]);
    let count = |f: &str| fs::read_to_string(out.join(f)).unwrap().lines().count();
    assert_eq!(count("trajectory.csv"), 1 + 20 * 2);
    assert_eq!(count("masks.csv"), 1 + 20 * 2);
    assert_eq!(count("loss_curve.csv"), 1 + 2);
    assert!(fs::read_to_string(out.join("config.txt")).unwrap().contains("joints = l_wrist,r_wrist"));
}

#[test]
fn gen_data_is_deterministic_under_seed() {
    let dir = TempDir::new().unwrap();
    for name in ["a", "b"] {
        ok(&["gen-data", "--out", &s(&dir.path().join(name)), "--seed", "9", "num_pairs=2", "frames_per_pair=30"]);
    }
    for f in ["manifest.json", "motions/pair_0001_reactor.json"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap());
    }
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["windows"].as_array().unwrap().len(), 2);
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn error_class(o: &Output) -> String {
    let line = String::from_utf8_lossy(&o.stderr);
    let v: Value = serde_json::from_str(line.lines().last().unwrap()).unwrap();
    v["error"].as_str().unwrap().to_string()
}

#[test]
fn errors_map_to_documented_exit_codes() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&remos(&["frobnicate"])), 2);

    let o = remos(&["gen-data", "--out", &s(dir.path()), "num_pair=3"]);
    assert_eq!((code(&o), error_class(&o).as_str()), (2, "config"));

    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "num_pairs = 1\nframes_per_pair = 20\nseed = 4 # kept\n").unwrap();
    ok(&["gen-data", "--config", &s(&cfg), "--out", &s(&dir.path().join("d")), "frames_per_pair=25"]);
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("d/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["pairs"][0]["frames"], 25);
    assert_eq!(manifest["synth"]["seed"], 4);

    let o = remos(&["train", "--out", &s(dir.path()), "data=/nonexistent/manifest.json"]);
    assert_eq!((code(&o), error_class(&o).as_str()), (3, "input"));

    let bad = dir.path().join("bad.ckpt");
    fs::write(&bad, "{not a checkpoint").unwrap();
    let o = remos(&[
        "inspect",
        "--dump-config",
        "--out",
        &s(dir.path()),
        &format!("checkpoint={}", s(&bad)),
    ]);
    assert_eq!((code(&o), error_class(&o).as_str()), (4, "checkpoint"));

    let o = remos(&["train", "--out", &s(dir.path()), &format!("data={}", s(&dir.path().join("d/manifest.json"))), "lr=1e300", "steps=10", "max_steps=3", "batch_size=1"]);
    assert_eq!((code(&o), error_class(&o).as_str()), (5, "diverged"));
    assert!(dir.path().join("body.ckpt").exists());
}
