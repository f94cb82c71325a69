//! Rectified linear unit. The derivative at exactly 0 is taken as 0.

use super::tensor::{Element, Tensor};
use super::NnError;

pub struct Relu<E: Element = f32> {
    mask: Option<Vec<bool>>,
    _marker: std::marker::PhantomData<E>,
}

impl<E: Element> Default for Relu<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Relu<E> {
    pub fn new() -> Self {
        Self {
            mask: None,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn forward(&mut self, input: &Tensor<E>) -> Tensor<E> {
        let mut mask = vec![false; input.len()];
        let out = Tensor::from_fn(input.shape().to_vec(), |i| {
            let v = input.data()[i];
            if v > E::ZERO {
                mask[i] = true;
                v
            } else {
                E::ZERO
            }
        });
        self.mask = Some(mask);
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor<E>) -> Result<Tensor<E>, NnError> {
        let mask = self
            .mask
            .as_ref()
            .ok_or_else(|| NnError::Usage("relu backward called before forward".into()))?;
        if mask.len() != grad_out.len() {
            return Err(NnError::Shape(format!(
                "grad has {} scalars but the activation mask has {}",
                grad_out.len(),
                mask.len()
            )));
        }
        Ok(Tensor::from_fn(grad_out.shape().to_vec(), |i| {
            if mask[i] {
                grad_out.data()[i]
            } else {
                E::ZERO
            }
        }))
    }
}
