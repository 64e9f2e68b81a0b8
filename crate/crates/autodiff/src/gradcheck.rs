//! Central finite-difference checks of parameter gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Description of the entry with the largest error.
    pub worst: String,
}

/// Relative error `|a − b| / max(|a|, |b|, floor)`. The floor keeps
/// near-zero gradients from turning round-off into large ratios.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Up to `per_tensor` evenly spaced entries of every parameter tensor.
pub fn strided_entries(store: &ParamStore, per_tensor: usize) -> Vec<(ParamId, usize)> {
    let mut out = Vec::new();
    for (id, p) in store.iter() {
        let n = p.value.numel();
        let take = per_tensor.min(n);
        for i in 0..take {
            out.push((id, i * n / take));
        }
    }
    out
}

pub struct GradCheck<F> {
    loss: F,
    pub step: f64,
    pub floor: f64,
}

impl<F> GradCheck<F>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    /// `loss` must build a scalar from the parameters in `store`.
    pub fn new(loss: F) -> Self {
        Self {
            loss,
            step: 1e-5,
            floor: 1e-6,
        }
    }

    fn value(&self, store: &ParamStore) -> Result<f64> {
        let mut g = Graph::new();
        let out = (self.loss)(&mut g, store)?;
        Ok(g.value(out).item())
    }

    /// Analytic gradients for every parameter (zeros where unreached).
    pub fn analytic(&self, store: &ParamStore) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let out = (self.loss)(&mut g, store)?;
        let grads = g.backward(out)?;
        Ok(store
            .iter()
            .map(|(id, p)| {
                g.param_vars()
                    .find(|(pid, _)| *pid == id)
                    .and_then(|(_, v)| grads.get(&g, v))
                    .unwrap_or_else(|| Tensor::zeros(p.value.shape()))
            })
            .collect())
    }

    /// Compares single entries against central differences.
    pub fn entries(&self, store: &mut ParamStore, picks: &[(ParamId, usize)]) -> Result<GradCheckReport> {
        let analytic = self.analytic(store)?;
        let mut report = GradCheckReport {
            checked: 0,
            max_rel_error: 0.0,
            worst: String::new(),
        };
        for &(id, i) in picks {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + self.step;
            let plus = self.value(store)?;
            store.value_mut(id).data_mut()[i] = orig - self.step;
            let minus = self.value(store)?;
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * self.step);
            let a = analytic[id.index()].data()[i];
            let rel = relative_error(a, numeric, self.floor);
            report.checked += 1;
            if rel >= report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = format!("{}[{i}]: analytic {a:e}, numeric {numeric:e}", store.get(id).name);
            }
        }
        Ok(report)
    }

    /// Compares the directional derivative along `direction` (one tensor
    /// per parameter, store order) with a central difference.
    pub fn directional(&self, store: &mut ParamStore, direction: &[Tensor]) -> Result<(f64, f64)> {
        let analytic = self.analytic(store)?;
        let a: f64 = analytic
            .iter()
            .zip(direction)
            .map(|(g, d)| g.data().iter().zip(d.data()).map(|(x, y)| x * y).sum::<f64>())
            .sum();
        let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
        let originals: Vec<Tensor> = store.iter().map(|(_, p)| p.value.clone()).collect();
        let at = |store: &mut ParamStore, s: f64| -> Result<f64> {
            for ((&id, d), o) in ids.iter().zip(direction).zip(&originals) {
                let v = store.value_mut(id).data_mut();
                for ((x, dv), ov) in v.iter_mut().zip(d.data()).zip(o.data()) {
                    *x = ov + s * dv;
                }
            }
            self.value(store)
        };
        let plus = at(store, self.step)?;
        let minus = at(store, -self.step)?;
        for (&id, o) in ids.iter().zip(&originals) {
            *store.value_mut(id) = o.clone();
        }
        Ok((a, (plus - minus) / (2.0 * self.step)))
    }
}
