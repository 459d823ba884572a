//! Dense tensors and a reverse-mode autodiff graph.
//!
//! Tensors are flat row-major buffers with an explicit shape. The op set is
//! exactly what the two-branch network needs: convolution, max pooling,
//! affine layers, batch norm, relu, softmax, the mask-specific pieces
//! (exp, reshape, transpose, spatial broadcast multiply) and the two loss
//! heads. Reductions accumulate in `f64` regardless of the storage type, so
//! the engine can run in `f32` for speed while staying close to the `f64`
//! reference gradients.

mod gradcheck;
mod graph;
pub mod io;

pub use gradcheck::grad_check;
pub use graph::{BnStats, Graph, Mode, NodeId, BN_EPS, BN_MOMENTUM};

use crate::error::{Error, Result};

/// Storage scalar for the engine. Implemented for `f32` and `f64`.
pub trait Element:
    num_traits::Float + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static
{
    fn of(x: f64) -> Self;
    fn f64(self) -> f64;
}

impl Element for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn f64(self) -> f64 {
        self
    }
}

/// Dense row-major tensor.
///
/// The shape is fixed at construction; no operation reshapes a tensor in
/// place. `grad` is populated by [`Graph::backward`] for leaves that were
/// inserted with `requires_grad` set.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E: Element> {
    shape: Vec<usize>,
    data: Vec<E>,
    pub requires_grad: bool,
    pub grad: Option<Vec<E>>,
}

impl<E: Element> Tensor<E> {
    pub fn new(shape: &[usize], data: Vec<E>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::dimension(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![E::zero(); numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![E::of(value); numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(&[1], value)
    }

    /// Tensor from `f64` entries, cast to the storage type.
    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape, values.iter().map(|&v| E::of(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    /// Mutable access to the values. The shape stays fixed.
    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    pub fn with_requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.f64()).collect()
    }

    /// Cast to another storage type (used when moving between the `f32`
    /// training engine and `f64` test instantiations).
    pub fn cast<T: Element>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::of(v.f64())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, E> {
        self.data.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Gradient buffer, materialized as zeros when absent.
    pub fn grad_or_zeros(&self) -> Vec<E> {
        match &self.grad {
            Some(g) => g.clone(),
            None => vec![E::zero(); self.numel()],
        }
    }
}
