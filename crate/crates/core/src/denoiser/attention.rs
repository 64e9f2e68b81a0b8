use remos_autodiff::{Graph, Tensor, Var};

use crate::error::{shape, Result};

/// Output of a multi-head attention call.
#[derive(Debug, Clone, Copy)]
pub struct Attention {
    /// `[B, T_q, d]`, heads concatenated along the feature axis.
    pub output: Var,
    /// Softmax weights `[B, heads, T_q, T_k]`.
    pub weights: Var,
}

fn split_heads(g: &mut Graph, x: Var, heads: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (b, t, d) = (s[0], s[1], s[2]);
    let x = g.reshape(x, &[b, t, heads, d / heads])?;
    Ok(g.permute(x, &[0, 2, 1, 3])?)
}

fn check(g: &Graph, q: Var, k: Var, v: Var, heads: usize) -> Result<()> {
    let (sq, sk, sv) = (g.shape(q), g.shape(k), g.shape(v));
    if sq.len() != 3 || sk.len() != 3 || sv.len() != 3 {
        return Err(shape(format!("attention expects [B, T, d] inputs, got {sq:?} {sk:?} {sv:?}")));
    }
    if sk != sv || sq[0] != sk[0] || sq[2] != sk[2] {
        return Err(shape(format!(
            "token-count or width mismatch: Q {sq:?}, K {sk:?}, V {sv:?}"
        )));
    }
    if heads == 0 || sq[2] % heads != 0 {
        return Err(shape(format!("width {} not divisible by {heads} heads", sq[2])));
    }
    Ok(())
}

/// Scaled dot-product attention per head over flattened (frame, joint)
/// tokens: `softmax(Q Kᵀ / sqrt(d_K)) V` with `d_K = d / heads`.
///
/// For cross-attention the queries are the reactor tokens and the keys and
/// values the actor tokens, so the weight matrix of each head is
/// `(N·J) × (N·J)`.
pub fn cost_xa(g: &mut Graph, q: Var, k: Var, v: Var, heads: usize) -> Result<Attention> {
    check(g, q, k, v, heads)?;
    let s = g.shape(q).to_vec();
    let (b, tq, d) = (s[0], s[1], s[2]);
    let dk = d / heads;
    // Scaling the queries instead of the logits keeps the large tensor
    // untouched.
    let q = g.scale(q, 1.0 / (dk as f64).sqrt());
    let qh = split_heads(g, q, heads)?;
    let kh = split_heads(g, k, heads)?;
    let vh = split_heads(g, v, heads)?;
    let logits = g.matmul(qh, kh, true)?;
    let weights = g.softmax(logits, 3)?;
    let out = g.matmul(weights, vh, false)?;
    let out = g.permute(out, &[0, 2, 1, 3])?;
    let output = g.reshape(out, &[b, tq, d])?;
    Ok(Attention { output, weights })
}

/// Expands per-token mask values (`[B, T]` flattened) over the feature axis.
pub(crate) fn token_mask(values: &[f64], batch: usize, tokens: usize, width: usize) -> Result<Tensor> {
    if values.len() != batch * tokens {
        return Err(shape(format!(
            "mask has {} entries, expected {batch} x {tokens}",
            values.len()
        )));
    }
    Ok(Tensor::from_fn(&[batch, tokens, width], |i| values[i / width]))
}

/// Hand cross-attention: queries are multiplied by the reactor mask and
/// keys by the actor mask before the attention logits; values stay
/// unmasked. Masks hold one value per token, `[B, T]` flattened in the
/// same frame-major order as the tokens.
pub fn h_xa(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    mask_reactor: &[f64],
    mask_actor: &[f64],
    heads: usize,
) -> Result<Attention> {
    check(g, q, k, v, heads)?;
    let sq = g.shape(q).to_vec();
    let sk = g.shape(k).to_vec();
    let mq = token_mask(mask_reactor, sq[0], sq[1], sq[2])?;
    let mk = token_mask(mask_actor, sk[0], sk[1], sk[2])?;
    let q = g.mask(q, mq)?;
    let k = g.mask(k, mk)?;
    cost_xa(g, q, k, v, heads)
}
