use crate::autodiff::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<S> {
    pub name: String,
    pub tensor: Tensor<S>,
    /// Frozen parameters (e.g. a fixed positional table) are never updated.
    pub trainable: bool,
}

/// Ordered parameter collection; the order is the checkpoint order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub(crate) fn push(&mut self, p: Param<S>) {
        self.params.push(p);
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, i: usize) -> &Param<S> {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Param<S> {
        &mut self.params[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param<S>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Param<S>> {
        self.params.iter_mut()
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<S>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Zero-filled gradient buffers aligned with the parameters.
    pub fn zeros_like(&self) -> Vec<Vec<S>> {
        self.params.iter().map(|p| vec![S::zero(); p.tensor.len()]).collect()
    }
}
