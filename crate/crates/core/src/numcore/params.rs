use indexmap::IndexMap;

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Named parameter tensors with same-shaped gradient accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T = f64> {
    values: IndexMap<String, Tensor<T>>,
    grads: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            values: IndexMap::new(),
            grads: Vec::new(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a parameter block; replaces an existing block of the same name.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        let grad = Tensor::zeros(value.shape());
        let (idx, _) = self.values.insert_full(name.into(), value);
        if idx == self.grads.len() {
            self.grads.push(grad);
        } else {
            self.grads[idx] = grad;
        }
        idx
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.values.get_index_of(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.values.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.values.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.values
            .get(name)
            .ok_or_else(|| Error::ModelFormat(format!("missing parameter block `{name}`")))
    }

    pub fn value_at(&self, idx: usize) -> &Tensor<T> {
        &self.values[idx]
    }

    pub fn value_at_mut(&mut self, idx: usize) -> &mut Tensor<T> {
        &mut self.values[idx]
    }

    pub fn name_at(&self, idx: usize) -> &str {
        self.values
            .get_index(idx)
            .map(|(k, _)| k.as_str())
            .unwrap_or("")
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(|k| k.as_str())
    }

    /// Total scalar count across all blocks.
    pub fn scalar_count(&self) -> usize {
        self.values.values().map(|t| t.len()).sum()
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.grads[i])
    }

    pub fn grad_at(&self, idx: usize) -> &Tensor<T> {
        &self.grads[idx]
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|x| *x = T::zero());
        }
    }

    /// Adds `scale · grads` into the accumulators.
    pub fn accumulate(&mut self, grads: &Gradients<T>, scale: T) {
        for (slot, g) in self.grads.iter_mut().zip(&grads.blocks) {
            if let Some(g) = g {
                for (a, &b) in slot.data_mut().iter_mut().zip(g.data()) {
                    *a = *a + scale * b;
                }
            }
        }
    }

    pub fn grads_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.values
            .keys()
            .map(|k| k.as_str())
            .zip(self.grads.iter_mut())
    }

    /// Simultaneous access to values and their gradients, for optimizers.
    pub fn values_and_grads_mut(
        &mut self,
    ) -> impl Iterator<Item = (&str, &mut Tensor<T>, &Tensor<T>)> {
        self.values
            .iter_mut()
            .zip(self.grads.iter())
            .map(|((k, v), g)| (k.as_str(), v, g))
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (k, v) in &self.values {
            out.insert(k.clone(), v.cast());
        }
        out
    }
}

/// Per-block gradients produced by one backward pass, aligned with a
/// `ParamStore`'s block order. Blocks that received no gradient are `None`.
#[derive(Clone, Debug)]
pub struct Gradients<T = f64> {
    pub(crate) blocks: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn empty(n: usize) -> Self {
        Gradients {
            blocks: vec![None; n],
        }
    }

    pub fn block(&self, idx: usize) -> Option<&Tensor<T>> {
        self.blocks.get(idx).and_then(|b| b.as_ref())
    }

    /// Adds `other` into `self` block by block.
    pub fn merge(&mut self, other: &Gradients<T>) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => a.add_assign(b),
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for b in self.blocks.iter_mut().flatten() {
            b.scale_assign(s);
        }
    }

    /// Dense value for block `idx` (zeros when absent).
    pub fn dense(&self, idx: usize, shape: &[usize]) -> Tensor<T> {
        self.block(idx)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_block_has_a_gradient_slot() {
        let mut s = ParamStore::<f64>::new();
        s.insert("a", Tensor::zeros(&[2, 3]));
        s.insert("b", Tensor::zeros(&[4]));
        assert_eq!(s.scalar_count(), 10);
        assert_eq!(s.grad("a").unwrap().shape(), &[2, 3]);
        assert_eq!(s.grad("b").unwrap().shape(), &[4]);
        s.insert("a", Tensor::zeros(&[5]));
        assert_eq!(s.grad("a").unwrap().shape(), &[5]);
        assert_eq!(s.len(), 2);
    }
}
