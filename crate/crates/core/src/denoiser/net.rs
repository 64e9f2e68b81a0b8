use ndarray::{Array3, ArrayView3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use remos_autodiff::{BatchStats, Graph, ParamStore, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::attention::{cost_xa, h_xa};
use super::embedding::{sinusoidal, timestep_embedding};
use super::{DenoiserConfig, Stage};
use crate::error::{invalid, shape, Result};
use crate::motion::HandInteractionMask;

const NORM_EPS: f64 = 1e-5;

/// Running statistics of the output-head batch normalization, used in
/// evaluation mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormBuffers {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNormBuffers {
    fn new(features: usize) -> Self {
        Self {
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
        }
    }

    pub fn update(&mut self, stats: &BatchStats, momentum: f64) {
        for (r, m) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = (1.0 - momentum) * *r + momentum * m;
        }
        for (r, v) in self.running_var.iter_mut().zip(&stats.var) {
            *r = (1.0 - momentum) * *r + momentum * v;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in the head normalization.
    Train,
    /// Running statistics in the head normalization.
    Eval,
}

/// Per-token mask values for the hand stage, `[B, N·J_H]` flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMasks {
    pub reactor: Vec<f64>,
    pub actor: Vec<f64>,
}

impl TokenMasks {
    pub fn from_masks(masks: &[&HandInteractionMask]) -> Self {
        Self {
            reactor: masks.iter().flat_map(|m| m.reactor_values()).collect(),
            actor: masks.iter().flat_map(|m| m.actor_values()).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Forward {
    /// Predicted clean motion `[B, N·J, 3]`.
    pub x0: Var,
    /// Cross-attention weights per layer, `[B, heads, N·J, N·J]`.
    pub cross_weights: Vec<Var>,
    pub self_weights: Vec<Var>,
    /// Head batch statistics (train mode only).
    pub bn_stats: Option<BatchStats>,
}

/// Transformer-decoder denoiser predicting the clean motion of one stage.
#[derive(Debug, Clone)]
pub struct DenoiserNet {
    config: DenoiserConfig,
    params: ParamStore,
    bn: BatchNormBuffers,
    /// Sinusoidal frame encoding tiled over joints, `[N·J, d]`.
    frame_table: Tensor,
}

fn frame_table(config: &DenoiserConfig) -> Tensor {
    let (n, j, d) = (config.window, config.joints, config.latent_dim);
    let rows: Vec<Vec<f64>> = (0..n).map(|f| sinusoidal(f as f64, d)).collect();
    Tensor::from_fn(&[n * j, d], |i| rows[i / d / j][i % d])
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

impl DenoiserNet {
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let d = config.latent_dim;
        let f = d * config.ffn_mult;
        let mut linear = |params: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize| -> Result<()> {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.add(format!("{name}.w"), uniform(&mut rng, &[fan_in, fan_out], bound))?;
            params.add(format!("{name}.b"), Tensor::zeros(&[fan_out]))?;
            Ok(())
        };
        linear(&mut params, "embed", 3, d)?;
        linear(&mut params, "actor_embed", 3, d)?;
        linear(&mut params, "time.0", d, d)?;
        linear(&mut params, "time.1", d, d)?;
        for l in 0..config.layers {
            for part in ["self", "cross"] {
                for p in ["q", "k", "v", "o"] {
                    linear(&mut params, &format!("layer{l}.{part}.{p}"), d, d)?;
                }
            }
            linear(&mut params, &format!("layer{l}.time"), d, d)?;
            linear(&mut params, &format!("layer{l}.ffn.0"), d, f)?;
            linear(&mut params, &format!("layer{l}.ffn.1"), f, d)?;
        }
        linear(&mut params, "head.0", d, d)?;
        linear(&mut params, "head.1", d, 3)?;
        let j = config.joints;
        params.add("joint_embed", uniform(&mut rng, &[j, d], 0.1))?;
        params.add("actor_joint_embed", uniform(&mut rng, &[j, d], 0.1))?;
        log::info!(
            "{:?} denoiser: {} tensors, {} parameters",
            config.stage,
            params.len(),
            params.num_scalars()
        );
        Ok(Self {
            bn: BatchNormBuffers::new(d),
            frame_table: frame_table(&config),
            config,
            params,
        })
    }

    /// Rebuilds a network from stored parts; shapes are checked against a
    /// freshly initialized network of the same config.
    pub fn from_parts(config: DenoiserConfig, params: ParamStore, bn: BatchNormBuffers) -> Result<Self> {
        let reference = Self::new(config.clone(), 0)?;
        if params.len() != reference.params.len() {
            return Err(invalid(format!(
                "expected {} parameter tensors, found {}",
                reference.params.len(),
                params.len()
            )));
        }
        for (_, p) in reference.params.iter() {
            let id = params.id(&p.name)?;
            if params.value(id).shape() != p.value.shape() {
                return Err(shape(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    p.name,
                    params.value(id).shape(),
                    p.value.shape()
                )));
            }
        }
        if bn.running_mean.len() != config.latent_dim || bn.running_var.len() != config.latent_dim {
            return Err(shape("batch-norm buffers do not match the latent width"));
        }
        Ok(Self {
            frame_table: frame_table(&config),
            config,
            params,
            bn,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn bn_buffers(&self) -> &BatchNormBuffers {
        &self.bn
    }

    pub fn update_bn(&mut self, stats: &BatchStats) {
        let m = self.config.bn_momentum;
        self.bn.update(stats, m);
    }

    fn p(&self, g: &mut Graph, name: &str) -> Result<Var> {
        Ok(g.param(&self.params, self.params.id(name)?))
    }

    fn linear(&self, g: &mut Graph, x: Var, name: &str) -> Result<Var> {
        let w = self.p(g, &format!("{name}.w"))?;
        let b = self.p(g, &format!("{name}.b"))?;
        let y = g.matmul(x, w, false)?;
        Ok(g.add(y, b)?)
    }

    fn embed_tokens(&self, g: &mut Graph, x: Var, proj: &str, joint_table: &str) -> Result<Var> {
        let (n, j) = (self.config.window, self.config.joints);
        let h = self.linear(g, x, proj)?;
        let table = self.p(g, joint_table)?;
        let idx: Vec<usize> = (0..n).flat_map(|_| 0..j).collect();
        let joints = g.index_select(table, 0, &idx)?;
        let h = g.add(h, joints)?;
        let frames = g.constant(self.frame_table.clone());
        Ok(g.add(h, frames)?)
    }

    fn check_tokens(&self, g: &Graph, v: Var, what: &str) -> Result<usize> {
        let s = g.shape(v);
        let tokens = self.config.window * self.config.joints;
        if s.len() != 3 || s[1] != tokens || s[2] != 3 {
            return Err(shape(format!(
                "{what} must be [B, {tokens}, 3] for {:?} stage, got {s:?}",
                self.config.stage
            )));
        }
        Ok(s[0])
    }

    /// Graph forward pass.
    ///
    /// `x_t` and `actor` are `[B, N·J, 3]` frame-major token arrays; `t`
    /// holds one diffusion step per batch entry. The hand stage needs
    /// `masks`; the body stage rejects them.
    pub fn forward(
        &self,
        g: &mut Graph,
        x_t: Var,
        t: &[usize],
        actor: Var,
        masks: Option<&TokenMasks>,
        mode: Mode,
    ) -> Result<Forward> {
        let cfg = &self.config;
        let b = self.check_tokens(g, x_t, "noisy input")?;
        if self.check_tokens(g, actor, "actor condition")? != b || t.len() != b {
            return Err(shape(format!(
                "batch mismatch: {b} noisy samples, {} actor samples, {} timesteps",
                g.shape(actor)[0],
                t.len()
            )));
        }
        match (cfg.stage, masks) {
            (Stage::Hands, None) => return Err(invalid("hand stage needs interaction masks")),
            (Stage::Body, Some(_)) => return Err(invalid("body stage takes no interaction masks")),
            _ => {}
        }
        let d = cfg.latent_dim;
        let heads = cfg.heads;

        let mut te = Vec::with_capacity(b * d);
        for &step in t {
            te.extend(timestep_embedding(step, cfg.steps, d)?);
        }
        let te = g.constant(Tensor::new(&[b, 1, d], te)?);
        let te = self.linear(g, te, "time.0")?;
        let te = g.silu(te);
        let te = self.linear(g, te, "time.1")?;

        let mut h = self.embed_tokens(g, x_t, "embed", "joint_embed")?;
        let mem = self.embed_tokens(g, actor, "actor_embed", "actor_joint_embed")?;
        let mem = g.layer_norm(mem, NORM_EPS)?;

        let mut cross_weights = Vec::with_capacity(cfg.layers);
        let mut self_weights = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let a = g.layer_norm(h, NORM_EPS)?;
            let q = self.linear(g, a, &format!("layer{l}.self.q"))?;
            let k = self.linear(g, a, &format!("layer{l}.self.k"))?;
            let v = self.linear(g, a, &format!("layer{l}.self.v"))?;
            let att = cost_xa(g, q, k, v, heads)?;
            self_weights.push(att.weights);
            let o = self.linear(g, att.output, &format!("layer{l}.self.o"))?;
            h = g.add(h, o)?;

            let a = g.layer_norm(h, NORM_EPS)?;
            let q = self.linear(g, a, &format!("layer{l}.cross.q"))?;
            let k = self.linear(g, mem, &format!("layer{l}.cross.k"))?;
            let v = self.linear(g, mem, &format!("layer{l}.cross.v"))?;
            let att = match masks {
                Some(m) => h_xa(g, q, k, v, &m.reactor, &m.actor, heads)?,
                None => cost_xa(g, q, k, v, heads)?,
            };
            cross_weights.push(att.weights);
            let o = self.linear(g, att.output, &format!("layer{l}.cross.o"))?;
            h = g.add(h, o)?;

            let tl = self.linear(g, te, &format!("layer{l}.time"))?;
            h = g.add(h, tl)?;

            let a = g.layer_norm(h, NORM_EPS)?;
            let f = self.linear(g, a, &format!("layer{l}.ffn.0"))?;
            let f = g.silu(f);
            let f = self.linear(g, f, &format!("layer{l}.ffn.1"))?;
            h = g.add(h, f)?;
        }

        let y = self.linear(g, h, "head.0")?;
        let y = g.silu(y);
        let (y, bn_stats) = match mode {
            Mode::Train => {
                let (y, stats) = g.batch_norm(y, cfg.bn_eps)?;
                (y, Some(stats))
            }
            Mode::Eval => {
                let mean = g.constant(Tensor::new(&[d], self.bn.running_mean.clone())?);
                let inv = self.bn.running_var.iter().map(|v| 1.0 / (v + cfg.bn_eps).sqrt()).collect();
                let inv = g.constant(Tensor::new(&[d], inv)?);
                let y = g.sub(y, mean)?;
                (g.mul(y, inv)?, None)
            }
        };
        let x0 = self.linear(g, y, "head.1")?;
        Ok(Forward {
            x0,
            cross_weights,
            self_weights,
            bn_stats,
        })
    }

    /// Evaluation-mode prediction on plain arrays (`N × J × 3` each).
    pub fn predict(
        &self,
        x_t: &[ArrayView3<f64>],
        t: &[usize],
        actor: &[ArrayView3<f64>],
        masks: Option<&TokenMasks>,
    ) -> Result<Vec<Array3<f64>>> {
        let (n, j) = (self.config.window, self.config.joints);
        let b = x_t.len();
        let mut g = Graph::new();
        let xv = g.constant(stack_tokens(x_t, n, j)?);
        let av = g.constant(stack_tokens(actor, n, j)?);
        let out = self.forward(&mut g, xv, t, av, masks, Mode::Eval)?;
        let data = g.value(out.x0).data();
        Ok((0..b)
            .map(|i| {
                Array3::from_shape_vec((n, j, 3), data[i * n * j * 3..(i + 1) * n * j * 3].to_vec())
                    .expect("prediction shape")
            })
            .collect())
    }

    /// `X̂_B(0) = f_θB(X_B(t), t, Y_B)` for one sample.
    pub fn body_denoise(&self, x_t: ArrayView3<f64>, t: usize, actor_body: ArrayView3<f64>) -> Result<Array3<f64>> {
        if self.config.stage != Stage::Body {
            return Err(invalid("body_denoise called on a hand-stage network"));
        }
        Ok(self.predict(&[x_t], &[t], &[actor_body], None)?.remove(0))
    }

    /// `X̂_H(0) = f_θH(X_H(t), t, Y_H, 1_HA, 1_HR)` for one sample.
    pub fn hand_denoise(
        &self,
        x_t: ArrayView3<f64>,
        t: usize,
        actor_hands: ArrayView3<f64>,
        masks: &HandInteractionMask,
    ) -> Result<Array3<f64>> {
        if self.config.stage != Stage::Hands {
            return Err(invalid("hand_denoise called on a body-stage network"));
        }
        let m = TokenMasks::from_masks(&[masks]);
        Ok(self.predict(&[x_t], &[t], &[actor_hands], Some(&m))?.remove(0))
    }
}

/// Stacks `N × J × 3` arrays into a `[B, N·J, 3]` tensor.
pub fn stack_tokens(xs: &[ArrayView3<f64>], n: usize, j: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(xs.len() * n * j * 3);
    for x in xs {
        if x.dim() != (n, j, 3) {
            return Err(shape(format!("expected {n} x {j} x 3 motion, got {:?}", x.dim())));
        }
        data.extend(x.iter().copied());
    }
    Ok(Tensor::new(&[xs.len(), n * j, 3], data)?)
}
