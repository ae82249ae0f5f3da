use super::Real;
use crate::error::{Error, Result};

/// Dense row-major array with an optional gradient slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    values: Vec<F>,
    grad: Option<Vec<F>>,
    requires_grad: bool,
}

impl<F: Real> Tensor<F> {
    pub fn new(shape: Vec<usize>, values: Vec<F>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::dims("tensor", &shape, &[values.len()]));
        }
        Ok(Self {
            shape,
            values,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![F::zero(); n],
            grad: None,
            requires_grad: false,
        }
    }

    /// A trainable tensor with a zeroed gradient slot.
    pub fn param(shape: Vec<usize>, values: Vec<F>) -> Result<Self> {
        let mut t = Self::new(shape, values)?;
        t.set_requires_grad(true);
        Ok(t)
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
        self.grad = if flag {
            Some(vec![F::zero(); self.values.len()])
        } else {
            None
        };
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Leading dimension (1 for scalars and vectors).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    /// Product of trailing dimensions.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [F] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<F> {
        self.values
    }

    pub fn grad(&self) -> Option<&[F]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|x| *x = F::zero());
        }
    }

    /// Adds `delta` into the gradient slot. No-op for tensors that do not
    /// require gradients.
    pub fn accumulate_grad(&mut self, delta: &[F]) -> Result<()> {
        if delta.len() != self.values.len() {
            return Err(Error::dims("accumulate_grad", &self.shape, &[delta.len()]));
        }
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().zip(delta).for_each(|(g, d)| *g = *g + *d);
        }
        Ok(())
    }

    /// Both the value array and the gradient slot (for optimizers).
    pub(crate) fn values_and_grad_mut(&mut self) -> (&mut [F], Option<&[F]>) {
        (&mut self.values, self.grad.as_deref())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        let mut t = Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|v| G::of(v.as_f64())).collect(),
            grad: None,
            requires_grad: false,
        };
        t.set_requires_grad(self.requires_grad);
        t
    }
}
