//! Metrics report.
//!
//! ```text
//! { "config": { "key": "value", ... },
//!   "metrics": { "mpjpe_mm": { "value": 12.3 },
//!                "multimodality": { "value": 0.4, "ci95": 0.05 }, ... } }
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{s, Array3, ArrayView3, Axis};
use remos_core::diffusion::{sample_reactive, SampleRequest};
use remos_core::metrics::{diversity, fid, mpjpe, mpjve, multimodality, FeatureExtractor};
use remos_core::motion::{denormalize_pair, Skeleton};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{input, CliResult};
use crate::manifest::{load_data, Split};
use crate::sample::{load_any_motion, load_models, sampler_config};
use crate::write_json;

#[derive(Debug, Clone, Serialize)]
pub struct MetricValue {
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci95: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regularization: Option<f64>,
}

impl MetricValue {
    fn plain(value: f64) -> Self {
        Self {
            value,
            ci95: None,
            regularization: None,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub config: BTreeMap<String, String>,
    pub metrics: BTreeMap<String, MetricValue>,
}

fn fid_metric(extractor: &FeatureExtractor, gt: &[ArrayView3<f64>], gen: &[ArrayView3<f64>]) -> CliResult<MetricValue> {
    let r = fid(&extractor.extract_all(gt)?, &extractor.extract_all(gen)?)?;
    Ok(MetricValue {
        value: r.distance,
        ci95: None,
        regularization: Some(r.regularization),
    })
}

fn sliding(m: &Array3<f64>, len: usize) -> Vec<ArrayView3<'_, f64>> {
    (0..=m.dim().0 - len).map(|s0| m.slice(s![s0..s0 + len, .., ..])).collect()
}

fn eval_files(cfg: &RunConfig, reference: &Path, prediction: &Path) -> CliResult<BTreeMap<String, MetricValue>> {
    let window: usize = cfg.get_or("feature_window", 20)?;
    let dim: usize = cfg.get_or("feature_dim", 8)?;
    let (gt, sk_a) = load_any_motion(reference)?;
    let (pred, sk_b) = load_any_motion(prediction)?;
    if sk_a != sk_b || gt.positions().dim() != pred.positions().dim() {
        return Err(input("reference and prediction differ in skeleton or length"));
    }
    let (a, b) = (gt.positions(), pred.positions());
    let mut m = BTreeMap::new();
    m.insert("mpjpe_mm".into(), MetricValue::plain(mpjpe(a.view(), b.view())?));
    m.insert("mpjve_mm".into(), MetricValue::plain(mpjve(a.view(), b.view())?));
    let window = window.min(a.dim().0);
    let (wa, wb) = (sliding(a, window), sliding(b, window));
    let extractor = FeatureExtractor::fit(&wa, dim.min(wa.len()))?;
    m.insert("fid".into(), fid_metric(&extractor, &wa, &wb)?);
    Ok(m)
}

fn joints_mpjpe(gt: &[Array3<f64>], pred: &[Array3<f64>], joints: &[usize]) -> CliResult<f64> {
    let mut total = 0.0;
    for (a, b) in gt.iter().zip(pred) {
        total += mpjpe(a.select(Axis(1), joints).view(), b.select(Axis(1), joints).view())?;
    }
    Ok(total / gt.len() as f64)
}

fn eval_dataset(cfg: &RunConfig, data_path: &Path) -> CliResult<BTreeMap<String, MetricValue>> {
    let split = match cfg.raw("split").unwrap_or("test") {
        "train" => Split::Train,
        "test" => Split::Test,
        o => return Err(input(format!("split must be train or test, got `{o}`"))),
    };
    let max_windows: usize = cfg.get_or("max_windows", 32)?;
    let repeats: usize = cfg.get_or("repeats", 2)?;
    let chunk: usize = cfg.get_or("sample_chunk", 16)?.max(1);
    let dim: usize = cfg.get_or("feature_dim", 8)?;
    let subset: usize = cfg.get_or("diversity_subset", 8)?;
    let seed: u64 = cfg.get_or("seed", 0)?;
    let models = load_models(cfg)?;
    let data = load_data(data_path)?;
    let sk: &Skeleton = &data.skeleton;
    let sampler = sampler_config(cfg, sk)?;
    cfg.finish()?;
    models.check_skeleton(sk)?;
    let windows = &data.split(split)[..data.split(split).len().min(max_windows)];
    if windows.len() < 2 || repeats == 0 {
        return Err(input("evaluation needs at least 2 windows and 1 repeat"));
    }
    let gt_world: Vec<Array3<f64>> = windows
        .iter()
        .map(|w| Ok(denormalize_pair(&w.pair, &w.transform)?.reactor().positions().clone()))
        .collect::<CliResult<_>>()?;
    let gt_norm: Vec<Array3<f64>> = windows.iter().map(|w| w.pair.reactor().positions().clone()).collect();

    let nw = windows.len();
    let mut norm: Vec<Vec<Array3<f64>>> = Vec::with_capacity(repeats);
    let mut world: Vec<Vec<Array3<f64>>> = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let (mut rn, mut rw) = (Vec::with_capacity(nw), Vec::with_capacity(nw));
        for (c, group) in windows.chunks(chunk).enumerate() {
            let requests: Vec<SampleRequest> = group
                .iter()
                .enumerate()
                .map(|(i, w)| SampleRequest {
                    actor: w.pair.actor().positions().view(),
                    transform: Some(&w.transform),
                    edits: Vec::new(),
                    stream: (r * nw + c * chunk + i) as u64,
                })
                .collect();
            for s in sample_reactive(&models.body, &models.hands, &models.schedule, &requests, sk, &sampler)? {
                rw.push(s.world.expect("transform given"));
                rn.push(s.normalized);
            }
        }
        norm.push(rn);
        world.push(rw);
        log::info!("repeat {} of {repeats} sampled", r + 1);
    }

    let all: Vec<usize> = (0..sk.num_joints()).collect();
    let mut m = BTreeMap::new();
    m.insert("mpjpe_mm".into(), MetricValue::plain(joints_mpjpe(&gt_world, &world[0], &all)?));
    m.insert("mpjpe_body_mm".into(), MetricValue::plain(joints_mpjpe(&gt_world, &world[0], sk.body_joints())?));
    m.insert("mpjpe_hands_mm".into(), MetricValue::plain(joints_mpjpe(&gt_world, &world[0], &sk.hand_joints())?));
    let hands = sk.hand_joints();
    for (name, joints) in [("fid_body", sk.body_joints()), ("fid_hands", &hands[..])] {
        let pick = |v: &[Array3<f64>]| -> Vec<Array3<f64>> { v.iter().map(|a| a.select(Axis(1), joints)).collect() };
        let (gt_sub, gen_sub) = (pick(&gt_norm), pick(&norm[0]));
        let gt_v: Vec<ArrayView3<f64>> = gt_sub.iter().map(|a| a.view()).collect();
        let gen_v: Vec<ArrayView3<f64>> = gen_sub.iter().map(|a| a.view()).collect();
        let extractor = FeatureExtractor::fit(&gt_v, dim.min(nw))?;
        m.insert(name.into(), fid_metric(&extractor, &gt_v, &gen_v)?);
    }
    let gt_views: Vec<ArrayView3<f64>> = gt_norm.iter().map(|a| a.view()).collect();
    let gen_views: Vec<ArrayView3<f64>> = norm[0].iter().map(|a| a.view()).collect();
    let extractor = FeatureExtractor::fit(&gt_views, dim.min(nw))?;
    m.insert("fid".into(), fid_metric(&extractor, &gt_views, &gen_views)?);
    let gen_features = extractor.extract_all(&gen_views)?;
    let div = diversity(&gen_features, subset.min(nw / 2), seed)?;
    m.insert("diversity".into(), MetricValue::plain(div.value));
    if repeats >= 2 {
        let per_condition = (0..nw)
            .map(|i| {
                (0..repeats)
                    .map(|r| extractor.extract(norm[r][i].view()))
                    .collect::<remos_core::Result<Vec<_>>>()
            })
            .collect::<remos_core::Result<Vec<_>>>()?;
        let mm = multimodality(&per_condition)?;
        m.insert(
            "multimodality".into(),
            MetricValue {
                value: mm.mean,
                ci95: Some(mm.ci95),
                regularization: None,
            },
        );
    }
    Ok(m)
}

pub fn run(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let metrics = match (cfg.path("reference"), cfg.path("prediction"), cfg.path("data")) {
        (Some(r), Some(p), None) => {
            let m = eval_files(cfg, &r, &p)?;
            cfg.finish()?;
            m
        }
        (None, None, Some(d)) => eval_dataset(cfg, &d)?,
        _ => {
            return Err(crate::error::CliError::Config(
                "eval needs either `reference` and `prediction`, or `data`".into(),
            ))
        }
    };
    for (k, v) in &metrics {
        log::info!("{k} = {}", v.value);
    }
    std::fs::create_dir_all(out)?;
    write_json(
        &out.join("metrics.json"),
        &Report {
            config: cfg.to_map(),
            metrics,
        },
    )
}
