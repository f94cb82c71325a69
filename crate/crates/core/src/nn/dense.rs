//! Fully connected layer: `out = input @ W^T + bias` with weights `[M, D]`.
//! Inputs of higher rank are flattened to `[N, D]` and the gradient is
//! restored to the original shape on the way back.

use super::tensor::{Element, Tensor};
use super::{LayerParams, NnError};

pub struct Dense<E: Element = f32> {
    pub params: LayerParams<E>,
    out_features: usize,
    in_features: usize,
    cached: Option<DenseCache<E>>,
}

struct DenseCache<E: Element> {
    /// Input flattened to [N, D].
    input: Tensor<E>,
    original_shape: Vec<usize>,
}

impl<E: Element> Dense<E> {
    pub fn new(params: LayerParams<E>) -> Result<Self, NnError> {
        let [out_features, in_features] = params.weights.dims2()?;
        if params.bias.shape() != [out_features] {
            return Err(NnError::Shape(format!(
                "bias shape {:?} does not match {out_features} output features",
                params.bias.shape()
            )));
        }
        Ok(Self {
            params,
            out_features,
            in_features,
            cached: None,
        })
    }

    fn flatten(&self, input: &Tensor<E>) -> Result<Tensor<E>, NnError> {
        let shape = input.shape();
        if shape.is_empty() {
            return Err(NnError::Shape("dense input must have a batch axis".into()));
        }
        let n = shape[0];
        let d: usize = shape[1..].iter().product();
        if d != self.in_features {
            return Err(NnError::Shape(format!(
                "input shape {:?} flattens to {d} features but weight shape {:?} expects {}",
                shape,
                self.params.weights.shape(),
                self.in_features
            )));
        }
        input.clone().reshape(vec![n, d])
    }

    pub fn forward(&mut self, input: &Tensor<E>) -> Result<Tensor<E>, NnError> {
        let flat = self.flatten(input)?;
        let [n, d] = flat.dims2()?;
        let m = self.out_features;
        let mut out = Tensor::zeros(vec![n, m]);
        // out[N, M] = flat[N, D] @ W^T (W is [M, D], transposed via strides)
        unsafe {
            E::gemm(
                n,
                d,
                m,
                E::ONE,
                flat.data().as_ptr(),
                d as isize,
                1,
                self.params.weights.data().as_ptr(),
                1,
                d as isize,
                E::ZERO,
                out.data_mut().as_mut_ptr(),
                m as isize,
                1,
            );
        }
        for row in out.data_mut().chunks_mut(m) {
            for (v, b) in row.iter_mut().zip(self.params.bias.data()) {
                *v += *b;
            }
        }
        self.cached = Some(DenseCache {
            input: flat,
            original_shape: input.shape().to_vec(),
        });
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<E>) -> Result<Tensor<E>, NnError> {
        let cache = self
            .cached
            .as_ref()
            .ok_or_else(|| NnError::Usage("dense backward called before forward".into()))?;
        let [n, d] = cache.input.dims2()?;
        let m = self.out_features;
        if grad_out.shape() != [n, m] {
            return Err(NnError::Shape(format!(
                "grad shape {:?} does not match output shape {:?}",
                grad_out.shape(),
                [n, m]
            )));
        }

        // dW[M, D] += gout^T [M, N] @ x [N, D]
        unsafe {
            E::gemm(
                m,
                n,
                d,
                E::ONE,
                grad_out.data().as_ptr(),
                1,
                m as isize,
                cache.input.data().as_ptr(),
                d as isize,
                1,
                E::ONE,
                self.params.weight_grad.data_mut().as_mut_ptr(),
                d as isize,
                1,
            );
        }
        // dB[M] += column sums of gout, accumulated in f64.
        for j in 0..m {
            let mut acc = 0.0f64;
            for i in 0..n {
                acc += grad_out.data()[i * m + j].to_f64();
            }
            self.params.bias_grad.data_mut()[j] += E::from_f64(acc);
        }

        // dX[N, D] = gout [N, M] @ W [M, D]
        let mut grad_in = Tensor::zeros(vec![n, d]);
        unsafe {
            E::gemm(
                n,
                m,
                d,
                E::ONE,
                grad_out.data().as_ptr(),
                m as isize,
                1,
                self.params.weights.data().as_ptr(),
                d as isize,
                1,
                E::ZERO,
                grad_in.data_mut().as_mut_ptr(),
                d as isize,
                1,
            );
        }
        grad_in.reshape(cache.original_shape.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_with(weights: Tensor<f32>, bias: Tensor<f32>) -> Dense<f32> {
        Dense::new(LayerParams::new(weights, bias)).unwrap()
    }

    #[test]
    fn identity_weight_zero_bias_passes_through() {
        let eye = Tensor::from_fn(vec![3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let mut layer = dense_with(eye, Tensor::zeros(vec![3]));
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let out = layer.forward(&x).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn zero_weight_emits_bias_rows() {
        let mut layer = dense_with(
            Tensor::zeros(vec![2, 4]),
            Tensor::new(vec![2], vec![0.5, -1.5]).unwrap(),
        );
        let out = layer.forward(&Tensor::from_fn(vec![3, 4], |i| i as f32)).unwrap();
        for row in out.data().chunks(2) {
            assert_eq!(row, &[0.5, -1.5]);
        }
    }

    #[test]
    fn feature_mismatch_names_both_shapes() {
        let mut layer = dense_with(Tensor::zeros(vec![4, 7]), Tensor::zeros(vec![4]));
        let err = layer.forward(&Tensor::zeros(vec![2, 6])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 6]") && msg.contains("[4, 7]"), "{msg}");
    }

    #[test]
    fn flattens_conv_activations() {
        let mut layer = dense_with(Tensor::zeros(vec![5, 12]), Tensor::zeros(vec![5]));
        let out = layer.forward(&Tensor::zeros(vec![2, 3, 2, 2])).unwrap();
        assert_eq!(out.shape(), &[2, 5]);
        let grad_in = layer.backward(&Tensor::zeros(vec![2, 5])).unwrap();
        assert_eq!(grad_in.shape(), &[2, 3, 2, 2]);
    }
}
