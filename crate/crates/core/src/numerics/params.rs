use indexmap::IndexMap;

use super::graph::Gradients;
use super::tensor::{Real, Tensor};
use crate::error::{format_err, shape_err, usage_err, Result};

/// Handle to a tensor registered in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Param<S> {
    value: Tensor<S>,
    grad: Tensor<S>,
}

/// Named parameters with paired gradient buffers, iterated in insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<S = f32> {
    entries: IndexMap<String, Param<S>>,
}

impl<S: Real> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { entries: IndexMap::new() }
    }

    pub fn add(&mut self, name: &str, value: Tensor<S>) -> Result<ParamId> {
        if name.is_empty() {
            return Err(usage_err!("parameter name must be non-empty"));
        }
        if self.entries.contains_key(name) {
            return Err(usage_err!("duplicate parameter name {name:?}"));
        }
        let grad = Tensor::zeros(value.dims())?;
        let (idx, _) = self.entries.insert_full(name.to_string(), Param { value, grad });
        Ok(ParamId(idx))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries.get_index_of(name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.entries.get_index(id.0).map(|(k, _)| k.as_str()).expect("valid param id")
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<S> {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.entries[id.0].grad
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.entries.iter().map(|(k, p)| (k.as_str(), &p.value))
    }

    /// Total scalar parameter count.
    pub fn num_params(&self) -> usize {
        self.entries.values().map(|p| p.value.numel()).sum()
    }

    /// Parameter count over names starting with `prefix`.
    pub fn num_params_with_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, p)| p.value.numel())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g = S::zero());
        }
    }

    /// Adds `scale * grads` into the gradient buffers.
    pub fn accumulate(&mut self, grads: &Gradients<S>, scale: S) {
        for (id, g) in grads.params() {
            let buf = self.entries[id.0].grad.data_mut();
            for (b, v) in buf.iter_mut().zip(g) {
                *b += scale * *v;
            }
        }
    }

    pub fn grad_norm(&self) -> S {
        self.entries
            .values()
            .flat_map(|p| p.grad.data().iter())
            .map(|&g| g * g)
            .sum::<S>()
            .sqrt()
    }

    /// Rescales all gradients so the global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: S) -> S {
        let norm = self.grad_norm();
        if norm > max_norm {
            let scale = max_norm / norm;
            for p in self.entries.values_mut() {
                p.grad.data_mut().iter_mut().for_each(|g| *g *= scale);
            }
        }
        norm
    }

    /// Copy of the store in another precision, same names and order.
    pub fn cast<T: Real>(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (k, p) in &self.entries {
            out.entries
                .insert(k.clone(), Param { value: p.value.cast(), grad: p.grad.cast() });
        }
        out
    }

    /// Errors unless `other` has the same names, order and shapes.
    pub fn check_compatible(&self, other: &ParamStore<S>) -> Result<()> {
        if self.len() != other.len() {
            return Err(format_err!("tensor count {} != {}", self.len(), other.len()));
        }
        for ((ka, a), (kb, b)) in self.entries.iter().zip(&other.entries) {
            if ka != kb {
                return Err(format_err!("tensor name {ka:?} != {kb:?}"));
            }
            if a.value.dims() != b.value.dims() {
                return Err(format_err!(
                    "tensor {ka:?} shape {:?} != {:?}",
                    a.value.dims(),
                    b.value.dims()
                ));
            }
        }
        Ok(())
    }

    /// Overwrites values from `other`, which must be compatible.
    pub fn load_values(&mut self, other: &ParamStore<S>) -> Result<()> {
        self.check_compatible(other)?;
        for (dst, src) in self.entries.values_mut().zip(other.entries.values()) {
            dst.value = src.value.clone();
        }
        Ok(())
    }

    /// Elementwise mean of compatible stores.
    pub fn average(stores: &[ParamStore<S>]) -> Result<ParamStore<S>> {
        let first = stores.first().ok_or_else(|| usage_err!("nothing to average"))?;
        for s in &stores[1..] {
            first.check_compatible(s)?;
        }
        let n = S::of(stores.len() as f64);
        let mut out = first.clone();
        out.zero_grad();
        for (i, p) in out.entries.values_mut().enumerate() {
            for (j, v) in p.value.data_mut().iter_mut().enumerate() {
                let mut acc = S::zero();
                for s in stores {
                    acc += s.entries[i].value.data()[j];
                }
                *v = acc / n;
            }
        }
        Ok(out)
    }

    pub(crate) fn check_id(&self, id: ParamId) -> Result<()> {
        if id.0 >= self.entries.len() {
            return Err(shape_err!("unknown parameter id {}", id.0));
        }
        Ok(())
    }
}
