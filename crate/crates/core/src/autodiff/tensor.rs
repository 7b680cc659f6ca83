use super::TensorError;
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Dense n-dimensional array with an optional gradient slot.
///
/// Values are immutable once the tensor is recorded on a tape; only the
/// gradient slot changes, and it accumulates across backward passes until
/// [`Tensor::zero_grad`] is called.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    values: Vec<S>,
    requires_grad: bool,
    grad: Option<Vec<S>>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, values: Vec<S>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(TensorError::LengthMismatch { shape, len: values.len() });
        }
        Ok(Self { shape, values, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), values: vec![S::zero(); n], requires_grad: false, grad: None }
    }

    pub fn scalar(v: S) -> Self {
        Self { shape: vec![], values: vec![v], requires_grad: false, grad: None }
    }

    pub fn vector(values: Vec<S>) -> Self {
        Self { shape: vec![values.len()], values, requires_grad: false, grad: None }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<S>) -> Result<Self, TensorError> {
        Self::new(vec![rows, cols], values)
    }

    pub fn from_matrix(m: &Matrix<S>) -> Self {
        Self {
            shape: vec![m.rows(), m.cols()],
            values: m.as_slice().to_vec(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient slot, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[S]) {
        assert_eq!(g.len(), self.values.len(), "gradient length must match tensor");
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
            None => self.grad = Some(g.to_vec()),
        }
    }

    /// Single value of a tensor with one element.
    pub fn item(&self) -> Option<S> {
        (self.values.len() == 1).then(|| self.values[0])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Row/column extents of a rank-2 tensor.
    pub fn dims2(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Some((*r, *c)),
            _ => None,
        }
    }

    pub fn to_matrix(&self) -> Option<Matrix<S>> {
        let (r, c) = self.dims2()?;
        Matrix::from_vec(r, c, self.values.clone())
    }

    pub(crate) fn from_parts(shape: Vec<usize>, values: Vec<S>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Self { shape, values, requires_grad: false, grad: None }
    }
}
