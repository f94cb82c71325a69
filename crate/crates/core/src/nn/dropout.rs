//! Inverted dropout: in training, zero each element with probability `rate`
//! and scale survivors by `1/(1 - rate)`; at inference it is the identity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{Element, Tensor};
use super::{NnError, Phase};

pub struct Dropout<E: Element = f32> {
    rate: f64,
    rng: ChaCha8Rng,
    /// None after an identity pass (inference or rate 0).
    mask: Option<Vec<bool>>,
    forwarded: bool,
    _marker: std::marker::PhantomData<E>,
}

impl<E: Element> Dropout<E> {
    pub fn new(rate: f64, seed: u64) -> Result<Self, NnError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::Config(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        Ok(Self {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mask: None,
            forwarded: false,
            _marker: std::marker::PhantomData,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn forward(&mut self, input: &Tensor<E>, phase: Phase) -> Tensor<E> {
        self.forwarded = true;
        if phase == Phase::Infer || self.rate == 0.0 {
            self.mask = None;
            return input.clone();
        }
        let scale = E::from_f64(1.0 / (1.0 - self.rate));
        let mut mask = vec![false; input.len()];
        let out = Tensor::from_fn(input.shape().to_vec(), |i| {
            if self.rng.gen::<f64>() >= self.rate {
                mask[i] = true;
                input.data()[i] * scale
            } else {
                E::ZERO
            }
        });
        self.mask = Some(mask);
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor<E>) -> Result<Tensor<E>, NnError> {
        if !self.forwarded {
            return Err(NnError::Usage("dropout backward called before forward".into()));
        }
        match &self.mask {
            None => Ok(grad_out.clone()),
            Some(mask) => {
                if mask.len() != grad_out.len() {
                    return Err(NnError::Shape(format!(
                        "grad has {} scalars but the dropout mask has {}",
                        grad_out.len(),
                        mask.len()
                    )));
                }
                let scale = E::from_f64(1.0 / (1.0 - self.rate));
                Ok(Tensor::from_fn(grad_out.shape().to_vec(), |i| {
                    if mask[i] {
                        grad_out.data()[i] * scale
                    } else {
                        E::ZERO
                    }
                }))
            }
        }
    }
}
