//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! Nodes are appended in evaluation order, so walking the tape backwards is
//! a valid reverse topological order. A graph belongs to one thread; build a
//! fresh one per forward pass.

use std::collections::HashMap;

use crate::error::{AutodiffError, Result};
use crate::kernels::{gemm_nn, gemm_nt, gemm_tn};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{strides, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Broadcast {
    Same,
    /// rhs repeats every `len` elements of the output.
    Suffix(usize),
    /// Explicit rhs index per output element.
    Map(Vec<usize>),
}

impl Broadcast {
    #[inline]
    fn rhs_index(&self, i: usize) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::Suffix(len) => i % len,
            Broadcast::Map(map) => map[i],
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
        shared_b: bool,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Sqrt(Var),
    Recip(Var),
    Abs(Var),
    Silu(Var),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    /// Output holds the normalized values; `inv_std` is per feature.
    BatchNorm {
        x: Var,
        rows: usize,
        features: usize,
        inv_std: Vec<f64>,
    },
    /// Output holds the normalized values; `inv_std` is per row.
    LayerNorm {
        x: Var,
        rows: usize,
        features: usize,
        inv_std: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    SumAxis {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Concat {
        xs: Vec<Var>,
        outer: usize,
        widths: Vec<usize>,
    },
    Slice {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
        start: usize,
        count: usize,
    },
    IndexSelect {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
        indices: Vec<usize>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Batch statistics produced by [`Graph::batch_norm`], used to update
/// running estimates for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients of a scalar w.r.t. every differentiable node of a graph.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient w.r.t. `v`, or `None` if `v` does not influence the output
    /// or was created as a constant.
    pub fn get(&self, graph: &Graph, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(graph.shape(v), g.clone()).expect("gradient shape"))
    }

    pub fn raw(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

fn outer_len_inner(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable leaf; its gradient is readable from [`Gradients`].
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Brings a parameter into the graph. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    pub fn param_vars(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.params.iter().map(|(&id, &v)| (id, v))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn check_axis(&self, v: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(v).len() {
            return Err(AutodiffError::InvalidAxis {
                axis,
                shape: self.shape(v).to_vec(),
            });
        }
        Ok(())
    }

    // ---- elementwise ------------------------------------------------------

    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<Broadcast> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa == sb {
            return Ok(Broadcast::Same);
        }
        let mismatch = || AutodiffError::ShapeMismatch {
            op,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        };
        if sb.len() > sa.len() {
            return Err(mismatch());
        }
        let offset = sa.len() - sb.len();
        for (i, &d) in sb.iter().enumerate() {
            if d != 1 && d != sa[offset + i] {
                return Err(mismatch());
            }
        }
        // Trailing suffix match without size-1 axes is a cheap modulus.
        let trimmed: Vec<usize> = sb.iter().copied().skip_while(|&d| d == 1).collect();
        if trimmed.iter().all(|&d| d != 1) && sa.ends_with(&trimmed) {
            return Ok(Broadcast::Suffix(trimmed.iter().product::<usize>().max(1)));
        }
        let out_strides = strides(sa);
        let b_strides = strides(sb);
        let n: usize = sa.iter().product();
        let map = (0..n)
            .map(|flat| {
                let mut idx = 0;
                for (i, &d) in sb.iter().enumerate() {
                    let ax = offset + i;
                    let coord = (flat / out_strides[ax]) % sa[ax];
                    if d != 1 {
                        idx += coord * b_strides[i];
                    }
                }
                idx
            })
            .collect();
        Ok(Broadcast::Map(map))
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(Var, Var, Broadcast) -> Op,
    ) -> Result<Var> {
        let bc = self.broadcast(op, a, b)?;
        let da = self.data(a);
        let db = self.data(b);
        let out: Vec<f64> = match &bc {
            Broadcast::Same => da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect(),
            _ => da
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, db[bc.rhs_index(i)]))
                .collect(),
        };
        let value = Tensor::new(self.shape(a), out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, make(a, b, bc), rg))
    }

    /// `a + b`, with `b` broadcast (right-aligned, size-1 axes repeat).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    /// Elementwise product, `b` broadcast as in [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    /// Elementwise multiply by a fixed (non-differentiable) mask.
    pub fn mask(&mut self, x: Var, mask: Tensor) -> Result<Var> {
        let m = self.constant(mask);
        self.mul(x, m)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self.data(x).iter().map(|&v| f(v)).collect();
        let value = Tensor::new(self.shape(x), out).expect("unary shape");
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, |v| -v, Op::Neg(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    /// Square root. The derivative at exactly 0 is taken as 0.
    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn recip(&mut self, x: Var) -> Var {
        self.unary(x, |v| 1.0 / v, Op::Recip(x))
    }

    /// Absolute value; subgradient 0 at 0.
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * sigmoid(v), Op::Silu(x))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.mul(x, x)
    }

    // ---- linear algebra ---------------------------------------------------

    /// Matrix product over the last two axes.
    ///
    /// `a` is `[.., m, k]`. `b` is either a shared matrix (`[k, n]`, or
    /// `[n, k]` with `trans_b`) or carries the same leading axes as `a`.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let mismatch = || AutodiffError::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (bk, n) = if trans_b {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        if bk != k {
            return Err(mismatch());
        }
        let lead_a = &sa[..sa.len() - 2];
        let lead_b = &sb[..sb.len() - 2];
        let shared_b = lead_b.is_empty();
        if !shared_b && lead_a != lead_b {
            return Err(mismatch());
        }
        let batch: usize = lead_a.iter().product();
        let mut out = vec![0.0; batch * m * n];
        let da = self.data(a);
        let db = self.data(b);
        if shared_b {
            if trans_b {
                gemm_nt(da, db, &mut out, batch * m, k, n);
            } else {
                gemm_nn(da, db, &mut out, batch * m, k, n);
            }
        } else {
            for i in 0..batch {
                let ai = &da[i * m * k..(i + 1) * m * k];
                let bi = &db[i * k * n..(i + 1) * k * n];
                let ci = &mut out[i * m * n..(i + 1) * m * n];
                if trans_b {
                    gemm_nt(ai, bi, ci, m, k, n);
                } else {
                    gemm_nn(ai, bi, ci, m, k, n);
                }
            }
        }
        let mut shape = lead_a.to_vec();
        shape.extend([m, n]);
        let value = Tensor::new(&shape, out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            value,
            Op::MatMul {
                a,
                b,
                trans_b,
                shared_b,
                batch,
                m,
                k,
                n,
            },
            rg,
        ))
    }

    // ---- normalization ----------------------------------------------------

    /// Softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis)?;
        let (outer, len, inner) = outer_len_inner(self.shape(x), axis);
        let src = self.data(x);
        let mut out = vec![0.0; src.len()];
        if inner == 1 {
            for (row, dst) in src.chunks_exact(len).zip(out.chunks_exact_mut(len)) {
                let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let mut total = 0.0;
                for (o, &v) in dst.iter_mut().zip(row) {
                    *o = (v - max).exp();
                    total += *o;
                }
                let inv = 1.0 / total;
                for o in dst.iter_mut() {
                    *o *= inv;
                }
            }
        }
        for o in 0..outer * usize::from(inner != 1) {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut max = f64::NEG_INFINITY;
                for l in 0..len {
                    max = max.max(src[base + l * inner]);
                }
                let mut total = 0.0;
                for l in 0..len {
                    let e = (src[base + l * inner] - max).exp();
                    out[base + l * inner] = e;
                    total += e;
                }
                for l in 0..len {
                    out[base + l * inner] /= total;
                }
            }
        }
        let value = Tensor::new(self.shape(x), out)?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            },
            rg,
        ))
    }

    /// Training-mode batch normalization without affine terms: every
    /// feature (last axis) is standardized over all other axes using the
    /// biased batch variance.
    pub fn batch_norm(&mut self, x: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let shape = self.shape(x).to_vec();
        let features = *shape.last().ok_or_else(|| AutodiffError::InvalidAxis {
            axis: 0,
            shape: shape.clone(),
        })?;
        let rows = self.value(x).numel() / features.max(1);
        let src = self.data(x);
        let mut mean = vec![0.0; features];
        for r in 0..rows {
            for (f, m) in mean.iter_mut().enumerate() {
                *m += src[r * features + f];
            }
        }
        for m in &mut mean {
            *m /= rows as f64;
        }
        let mut var = vec![0.0; features];
        for r in 0..rows {
            for f in 0..features {
                let d = src[r * features + f] - mean[f];
                var[f] += d * d;
            }
        }
        for v in &mut var {
            *v /= rows as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            for f in 0..features {
                out[r * features + f] = (src[r * features + f] - mean[f]) * inv_std[f];
            }
        }
        let value = Tensor::new(&shape, out)?;
        let rg = self.rg(x);
        let v = self.push(
            value,
            Op::BatchNorm {
                x,
                rows,
                features,
                inv_std,
            },
            rg,
        );
        Ok((v, BatchStats { mean, var }))
    }

    /// Standardizes every row (last axis) to zero mean and unit variance.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let features = *shape.last().ok_or_else(|| AutodiffError::InvalidAxis {
            axis: 0,
            shape: shape.clone(),
        })?;
        let rows = self.value(x).numel() / features.max(1);
        let src = self.data(x);
        let mut out = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &src[r * features..(r + 1) * features];
            let mean = row.iter().sum::<f64>() / features as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / features as f64;
            let s = 1.0 / (var + eps).sqrt();
            inv_std[r] = s;
            for (o, v) in out[r * features..(r + 1) * features].iter_mut().zip(row) {
                *o = (v - mean) * s;
            }
        }
        let value = Tensor::new(&shape, out)?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                rows,
                features,
                inv_std,
            },
            rg,
        ))
    }

    // ---- reductions -------------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.data(x).iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s: f64 = self.data(x).iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s / n), Op::Mean(x), rg)
    }

    /// Sums over `axis`; the axis is kept with size 1 when `keep_dim`.
    pub fn sum_axis(&mut self, x: Var, axis: usize, keep_dim: bool) -> Result<Var> {
        self.check_axis(x, axis)?;
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = outer_len_inner(&shape, axis);
        let src = self.data(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        let mut new_shape = shape;
        if keep_dim {
            new_shape[axis] = 1;
        } else {
            new_shape.remove(axis);
        }
        let value = Tensor::new(&new_shape, out)?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::SumAxis {
                x,
                outer,
                len,
                inner,
            },
            rg,
        ))
    }

    // ---- layout -----------------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len()
            || perm
                .iter()
                .any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true))
        {
            return Err(AutodiffError::Invalid(format!(
                "permutation {perm:?} invalid for shape {shape:?}"
            )));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let out = permute_data(self.data(x), &shape, perm);
        let value = Tensor::new(&out_shape, out)?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            rg,
        ))
    }

    /// Swaps two axes.
    pub fn transpose(&mut self, x: Var, a: usize, b: usize) -> Result<Var> {
        let mut perm: Vec<usize> = (0..self.shape(x).len()).collect();
        if a >= perm.len() || b >= perm.len() {
            return Err(AutodiffError::InvalidAxis {
                axis: a.max(b),
                shape: self.shape(x).to_vec(),
            });
        }
        perm.swap(a, b);
        self.permute(x, &perm)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| AutodiffError::Invalid("concat of zero tensors".into()))?;
        self.check_axis(first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let widths: Vec<usize> = xs.iter().map(|&x| self.shape(x)[axis] * inner).collect();
        let row: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * row);
        for o in 0..outer {
            for (&x, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.data(x)[o * w..(o + 1) * w]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(&shape, out)?;
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(
            value,
            Op::Concat {
                xs: xs.to_vec(),
                outer,
                widths,
            },
            rg,
        ))
    }

    /// Contiguous range `start..start+count` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, count: usize) -> Result<Var> {
        self.check_axis(x, axis)?;
        let shape = self.shape(x).to_vec();
        if start + count > shape[axis] {
            return Err(AutodiffError::Invalid(format!(
                "slice {start}..{} out of range for axis {axis} of {shape:?}",
                start + count
            )));
        }
        let (outer, len, inner) = outer_len_inner(&shape, axis);
        let src = self.data(x);
        let mut out = Vec::with_capacity(outer * count * inner);
        for o in 0..outer {
            let from = (o * len + start) * inner;
            out.extend_from_slice(&src[from..from + count * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = count;
        let value = Tensor::new(&new_shape, out)?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::Slice {
                x,
                outer,
                len,
                inner,
                start,
                count,
            },
            rg,
        ))
    }

    /// Gathers `indices` along `axis` (repeats allowed).
    pub fn index_select(&mut self, x: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        self.check_axis(x, axis)?;
        let shape = self.shape(x).to_vec();
        if let Some(&bad) = indices.iter().find(|&&i| i >= shape[axis]) {
            return Err(AutodiffError::Invalid(format!(
                "index {bad} out of range for axis {axis} of {shape:?}"
            )));
        }
        let (outer, len, inner) = outer_len_inner(&shape, axis);
        let src = self.data(x);
        let mut out = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &idx in indices {
                let from = (o * len + idx) * inner;
                out.extend_from_slice(&src[from..from + inner]);
            }
        }
        let mut new_shape = shape;
        new_shape[axis] = indices.len();
        let value = Tensor::new(&new_shape, out)?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::IndexSelect {
                x,
                outer,
                len,
                inner,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    // ---- reverse pass -----------------------------------------------------

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.numel() != 1 {
            return Err(AutodiffError::NonScalar(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[output.0].requires_grad {
            grads[output.0] = Some(vec![1.0]);
        }
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf | Op::Param) {
                continue;
            }
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Graph::backward`] and adds parameter gradients into `store`.
    pub fn backward_into(&self, output: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.backward(output)?;
        store.accumulate(self, &grads)?;
        Ok(grads)
    }

    fn propagate(&self, idx: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let y = node.value.data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b, bc) => {
                if let Some(ga) = self.slot(grads, *a) {
                    add_into(ga, gy);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    reduce_into(gb, gy, bc, |g, _| g);
                }
            }
            Op::Sub(a, b, bc) => {
                if let Some(ga) = self.slot(grads, *a) {
                    add_into(ga, gy);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    reduce_into(gb, gy, bc, |g, _| -g);
                }
            }
            Op::Mul(a, b, bc) => {
                let da = self.data(*a);
                let db = self.data(*b);
                if let Some(ga) = self.slot(grads, *a) {
                    for (i, g) in ga.iter_mut().enumerate() {
                        *g += gy[i] * db[bc.rhs_index(i)];
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    reduce_into(gb, gy, bc, |g, i| g * da[i]);
                }
            }
            Op::Neg(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().zip(gy).for_each(|(g, d)| *g -= d);
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().zip(gy).for_each(|(g, d)| *g += d * c);
                }
            }
            Op::AddScalar(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    add_into(gx, gy);
                }
            }
            Op::Exp(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for i in 0..gx.len() {
                        gx[i] += gy[i] * y[i];
                    }
                }
            }
            Op::Sqrt(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for i in 0..gx.len() {
                        if y[i] > 0.0 {
                            gx[i] += gy[i] * 0.5 / y[i];
                        }
                    }
                }
            }
            Op::Recip(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for i in 0..gx.len() {
                        gx[i] -= gy[i] * y[i] * y[i];
                    }
                }
            }
            Op::Abs(x) => {
                let dx = self.data(*x);
                if let Some(gx) = self.slot(grads, *x) {
                    for i in 0..gx.len() {
                        let s = if dx[i] > 0.0 {
                            1.0
                        } else if dx[i] < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        gx[i] += gy[i] * s;
                    }
                }
            }
            Op::Silu(x) => {
                let dx = self.data(*x);
                if let Some(gx) = self.slot(grads, *x) {
                    for i in 0..gx.len() {
                        let s = sigmoid(dx[i]);
                        gx[i] += gy[i] * (s + dx[i] * s * (1.0 - s));
                    }
                }
            }
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            } => {
                if let Some(gx) = self.slot(grads, *x) {
                    if *inner == 1 {
                        let rows = gx.chunks_exact_mut(*len).zip(y.chunks_exact(*len)).zip(gy.chunks_exact(*len));
                        for ((gxr, yr), gyr) in rows {
                            let dot: f64 = yr.iter().zip(gyr).map(|(a, b)| a * b).sum();
                            for ((g, &yv), &gv) in gxr.iter_mut().zip(yr).zip(gyr) {
                                *g += yv * (gv - dot);
                            }
                        }
                    }
                    for o in 0..*outer * usize::from(*inner != 1) {
                        for i in 0..*inner {
                            let base = o * len * inner + i;
                            let mut dot = 0.0;
                            for l in 0..*len {
                                let p = base + l * inner;
                                dot += gy[p] * y[p];
                            }
                            for l in 0..*len {
                                let p = base + l * inner;
                                gx[p] += y[p] * (gy[p] - dot);
                            }
                        }
                    }
                }
            }
            Op::BatchNorm {
                x,
                rows,
                features,
                inv_std,
            } => {
                if let Some(gx) = self.slot(grads, *x) {
                    let (rows, features) = (*rows, *features);
                    let mut sum_g = vec![0.0; features];
                    let mut sum_gy = vec![0.0; features];
                    for r in 0..rows {
                        for f in 0..features {
                            let p = r * features + f;
                            sum_g[f] += gy[p];
                            sum_gy[f] += gy[p] * y[p];
                        }
                    }
                    let m = rows as f64;
                    for r in 0..rows {
                        for f in 0..features {
                            let p = r * features + f;
                            gx[p] += inv_std[f] / m * (m * gy[p] - sum_g[f] - y[p] * sum_gy[f]);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                rows,
                features,
                inv_std,
            } => {
                if let Some(gx) = self.slot(grads, *x) {
                    let m = *features as f64;
                    for r in 0..*rows {
                        let range = r * features..(r + 1) * features;
                        let g = &gy[range.clone()];
                        let yr = &y[range.clone()];
                        let sum_g: f64 = g.iter().sum();
                        let sum_gy: f64 = g.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for (k, p) in range.enumerate() {
                            gx[p] += inv_std[r] / m * (m * g[k] - sum_g - yr[k] * sum_gy);
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().for_each(|g| *g += gy[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    let s = gy[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|g| *g += s);
                }
            }
            Op::SumAxis {
                x,
                outer,
                len,
                inner,
            } => {
                if let Some(gx) = self.slot(grads, *x) {
                    for o in 0..*outer {
                        for l in 0..*len {
                            let base = (o * len + l) * inner;
                            for i in 0..*inner {
                                gx[base + i] += gy[o * inner + i];
                            }
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    add_into(gx, gy);
                }
            }
            Op::Permute { x, perm } => {
                let in_shape = self.shape(*x).to_vec();
                if let Some(gx) = self.slot(grads, *x) {
                    let mut inverse = vec![0; perm.len()];
                    for (i, &p) in perm.iter().enumerate() {
                        inverse[p] = i;
                    }
                    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
                    let back = permute_data(gy, &out_shape, &inverse);
                    add_into(gx, &back);
                }
            }
            Op::Concat { xs, outer, widths } => {
                let row: usize = widths.iter().sum();
                let mut offset = 0;
                for (&x, &w) in xs.iter().zip(widths) {
                    if let Some(gx) = self.slot(grads, x) {
                        for o in 0..*outer {
                            let src = &gy[o * row + offset..o * row + offset + w];
                            add_into(&mut gx[o * w..(o + 1) * w], src);
                        }
                    }
                    offset += w;
                }
            }
            Op::Slice {
                x,
                outer,
                len,
                inner,
                start,
                count,
            } => {
                if let Some(gx) = self.slot(grads, *x) {
                    let w = count * inner;
                    for o in 0..*outer {
                        let to = (o * len + start) * inner;
                        add_into(&mut gx[to..to + w], &gy[o * w..(o + 1) * w]);
                    }
                }
            }
            Op::IndexSelect {
                x,
                outer,
                len,
                inner,
                indices,
            } => {
                if let Some(gx) = self.slot(grads, *x) {
                    let mut src = 0;
                    for o in 0..*outer {
                        for &idx in indices {
                            let to = (o * len + idx) * inner;
                            add_into(&mut gx[to..to + inner], &gy[src..src + inner]);
                            src += inner;
                        }
                    }
                }
            }
            Op::MatMul {
                a,
                b,
                trans_b,
                shared_b,
                batch,
                m,
                k,
                n,
            } => {
                let (batch, m, k, n) = (*batch, *m, *k, *n);
                let da = self.data(*a);
                let db = self.data(*b);
                if let Some(ga) = self.slot(grads, *a) {
                    if *shared_b {
                        if *trans_b {
                            gemm_nn(gy, db, ga, batch * m, n, k);
                        } else {
                            gemm_nt(gy, db, ga, batch * m, n, k);
                        }
                    } else {
                        for i in 0..batch {
                            let gyi = &gy[i * m * n..(i + 1) * m * n];
                            let bi = &db[i * k * n..(i + 1) * k * n];
                            let gai = &mut ga[i * m * k..(i + 1) * m * k];
                            if *trans_b {
                                gemm_nn(gyi, bi, gai, m, n, k);
                            } else {
                                gemm_nt(gyi, bi, gai, m, n, k);
                            }
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    if *shared_b {
                        if *trans_b {
                            gemm_tn(gy, da, gb, n, batch * m, k);
                        } else {
                            gemm_tn(da, gy, gb, k, batch * m, n);
                        }
                    } else {
                        for i in 0..batch {
                            let gyi = &gy[i * m * n..(i + 1) * m * n];
                            let ai = &da[i * m * k..(i + 1) * m * k];
                            let gbi = &mut gb[i * k * n..(i + 1) * k * n];
                            if *trans_b {
                                gemm_tn(gyi, ai, gbi, n, m, k);
                            } else {
                                gemm_tn(ai, gyi, gbi, k, m, n);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Mutable gradient buffer for `v`, created zeroed on first use; `None`
    /// when `v` does not take gradients.
    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut [f64]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn reduce_into(dst: &mut [f64], gy: &[f64], bc: &Broadcast, f: impl Fn(f64, usize) -> f64) {
    match bc {
        Broadcast::Same => {
            for (i, d) in dst.iter_mut().enumerate() {
                *d += f(gy[i], i);
            }
        }
        _ => {
            for (i, &g) in gy.iter().enumerate() {
                dst[bc.rhs_index(i)] += f(g, i);
            }
        }
    }
}

fn permute_data(src: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = src.len();
    let mut out = Vec::with_capacity(n);
    let nd = out_shape.len();
    let mut idx = vec![0usize; nd];
    let mut offset = 0usize;
    for _ in 0..n {
        out.push(src[offset]);
        for ax in (0..nd).rev() {
            idx[ax] += 1;
            offset += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}
