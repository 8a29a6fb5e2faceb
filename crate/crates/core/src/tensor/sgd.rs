use alloc::format;

use super::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

/// Trainable tensor with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        Self { value, grad: None }
    }

    /// Add `grad` to the stored gradient.
    pub fn accumulate(&mut self, grad: &Tensor<T>) -> Result<()> {
        if grad.shape() != self.value.shape() {
            return Err(Error::Shape {
                op: "accumulate",
                detail: format!("{:?} vs {:?}", grad.shape(), self.value.shape()),
            });
        }
        match &mut self.grad {
            Some(g) => g.data_mut().iter_mut().zip(grad.data()).for_each(|(a, &b)| *a = *a + b),
            None => self.grad = Some(grad.clone()),
        }
        Ok(())
    }
}

/// Plain stochastic gradient descent: `p <- p - lr * grad`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sgd {
    learning_rate: f64,
}

impl Sgd {
    pub fn new(learning_rate: f64) -> Result<Self> {
        // lr = 0 is allowed so a run can be made parameter-preserving.
        if !learning_rate.is_finite() || learning_rate < 0.0 {
            return Err(Error::Invalid(format!("learning rate must be >= 0, got {learning_rate}")));
        }
        Ok(Self { learning_rate })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// Update every parameter in place and clear its gradient. All
    /// gradients are checked before anything is written.
    pub fn step<'a, T: Real>(&self, params: impl IntoIterator<Item = &'a mut Param<T>>) -> Result<()> {
        let mut params: alloc::vec::Vec<&mut Param<T>> = params.into_iter().collect();
        if let Some(i) = params.iter().position(|p| p.grad.is_none()) {
            return Err(Error::MissingGradient(i));
        }
        let lr = T::from_f64(self.learning_rate);
        for p in params.iter_mut() {
            let grad = p.grad.take().expect("checked above");
            p.value.data_mut().iter_mut().zip(grad.data()).for_each(|(v, &g)| *v = *v - lr * g);
        }
        Ok(())
    }
}
