//! Shape-carrying flat tensors.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{CoreError, CoreResult};
use crate::numerics::real::Real;
use crate::rng::Rng;

/// Dense row-major tensor. `grad` is populated by the tape after a backward
/// pass over nodes that require gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
    requires_grad: bool,
    grad: Option<Vec<F>>,
}

impl<F: Real> Tensor<F> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<F>) -> CoreResult<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(CoreError::shape("zero-sized dimension"));
        }
        if numel != data.len() {
            return Err(CoreError::shape(alloc::format!(
                "shape {shape:?} implies {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: alloc::vec![F::zero(); numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: F) -> Self {
        Tensor {
            shape: alloc::vec![1],
            data: alloc::vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn vector(data: Vec<F>) -> Self {
        let n = data.len();
        Tensor {
            shape: alloc::vec![n],
            data,
            requires_grad: false,
            grad: None,
        }
    }

    /// Gaussian init with the given standard deviation.
    pub fn randn(shape: Vec<usize>, std: f64, rng: &mut Rng) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: rng.normal_vec(numel, std),
            requires_grad: false,
            grad: None,
        }
    }

    /// Identity matrix of side `n`.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(alloc::vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = F::one();
        }
        t
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[F]> {
        self.grad.as_deref()
    }

    pub(crate) fn set_grad(&mut self, grad: Option<Vec<F>>) {
        debug_assert!(grad.as_ref().map_or(true, |g| g.len() == self.data.len()));
        self.grad = grad;
    }

    /// Scalar value; errors if the tensor has more than one element.
    pub fn item(&self) -> CoreResult<F> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(CoreError::invalid("item() on non-scalar tensor"))
        }
    }

    /// Interprets the tensor as a matrix, returning (rows, cols). A 1-D
    /// tensor is treated as a single row.
    pub fn dims2(&self) -> CoreResult<(usize, usize)> {
        match self.shape.len() {
            1 => Ok((1, self.shape[0])),
            2 => Ok((self.shape[0], self.shape[1])),
            _ => Err(CoreError::shape(alloc::format!(
                "expected rank <= 2, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Row `r` of the matrix view.
    pub fn row(&self, r: usize) -> &[F] {
        let (_, cols) = self.dims2().expect("row() on rank > 2 tensor");
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts precision, dropping any gradient.
    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::from_f64(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    pub fn describe(&self) -> String {
        alloc::format!("Tensor{:?}", self.shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn shape_data_agreement_enforced() {
        assert!(Tensor::from_vec(vec![2, 3], vec![0.0f32; 6]).is_ok());
        assert!(Tensor::from_vec(vec![2, 3], vec![0.0f32; 5]).is_err());
        assert!(Tensor::from_vec(vec![0], Vec::<f32>::new()).is_err());
    }

    #[test]
    fn eye_and_row_access() {
        let t = Tensor::<f64>::eye(3);
        assert_eq!(t.row(1), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn cast_roundtrip() {
        let t = Tensor::from_vec(vec![2], vec![1.5f32, -2.25]).unwrap();
        let d: Tensor<f64> = t.cast();
        assert_eq!(d.data(), &[1.5, -2.25]);
    }
}
