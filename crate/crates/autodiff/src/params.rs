use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{AutodiffError, Result};
use crate::graph::{Gradients, Graph};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

/// Named tensor as written to checkpoint files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, tensor: &Tensor) -> Self {
        Self {
            name: name.into(),
            shape: tensor.shape().to_vec(),
            values: tensor.data().to_vec(),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(&self.shape, self.values.clone())
    }
}

/// Ordered collection of parameters, addressable by id or name.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
    grads_ready: bool,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(AutodiffError::Invalid(format!("duplicate parameter `{name}`")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            grad: None,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| AutodiffError::UnknownParameter(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor> {
        self.params[id.0].grad.as_ref()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    /// True once a backward pass has deposited gradients since the last
    /// optimizer step or [`ParamStore::zero_grad`].
    pub fn has_gradients(&self) -> bool {
        self.grads_ready
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
        self.grads_ready = false;
    }

    /// Adds the gradients of every parameter node in `graph` into the
    /// accumulators. Parameters the output does not depend on receive zeros.
    pub fn accumulate(&mut self, graph: &Graph, grads: &Gradients) -> Result<()> {
        for (id, var) in graph.param_vars() {
            let p = self
                .params
                .get_mut(id.0)
                .ok_or_else(|| AutodiffError::UnknownParameter(format!("#{}", id.0)))?;
            let acc = p
                .grad
                .get_or_insert_with(|| Tensor::zeros(p.value.shape()));
            if let Some(g) = grads.raw(var) {
                acc.data_mut().iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
        self.grads_ready = true;
        Ok(())
    }

    pub fn to_named(&self) -> Vec<NamedTensor> {
        self.params
            .iter()
            .map(|p| NamedTensor::new(p.name.clone(), &p.value))
            .collect()
    }

    pub fn from_named(tensors: &[NamedTensor]) -> Result<Self> {
        let mut store = Self::new();
        for t in tensors {
            store.add(t.name.clone(), t.to_tensor()?)?;
        }
        Ok(store)
    }

    /// Overwrites values from `tensors`, which must match names and shapes.
    pub fn load_values(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        if tensors.len() != self.params.len() {
            return Err(AutodiffError::Invalid(format!(
                "expected {} tensors, found {}",
                self.params.len(),
                tensors.len()
            )));
        }
        for (p, t) in self.params.iter_mut().zip(tensors) {
            if p.name != t.name || p.value.shape() != t.shape.as_slice() {
                return Err(AutodiffError::Invalid(format!(
                    "tensor `{}` {:?} does not match parameter `{}` {:?}",
                    t.name,
                    t.shape,
                    p.name,
                    p.value.shape()
                )));
            }
            p.value = t.to_tensor()?;
        }
        Ok(())
    }
}
