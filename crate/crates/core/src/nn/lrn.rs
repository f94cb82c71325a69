//! Local response normalization across channels:
//! `b_c = a_c / (k + alpha * sum_{c' in window} a_{c'}^2)^beta`
//! with the window spanning `depth_radius` channels on each side.
//!
//! The channel window slides over contiguous spatial rows: per image the
//! squared activations are accumulated row-wise and updated by one
//! add/subtract pair per channel step.

use super::tensor::{Element, Tensor};
use super::NnError;

pub struct Lrn<E: Element = f32> {
    depth_radius: usize,
    k: f64,
    alpha: f64,
    beta: f64,
    cache: Option<LrnCache<E>>,
}

struct LrnCache<E: Element> {
    input: Tensor<E>,
    /// `k + alpha * window_sum` per element, reused by backward.
    denom: Vec<f64>,
    /// `denom^-beta`, so backward needs no fresh pow calls.
    denom_pow: Vec<f64>,
}

/// `d^-beta`, with the AlexNet exponent 0.75 special-cased to square
/// roots; powf dominates the whole layer otherwise.
#[inline]
fn pow_neg_beta(d: f64, beta: f64) -> f64 {
    if beta == 0.75 {
        let s = d.sqrt();
        1.0 / (s * s.sqrt())
    } else {
        d.powf(-beta)
    }
}

impl<E: Element> Lrn<E> {
    pub fn new(depth_radius: usize, k: f64, alpha: f64, beta: f64) -> Self {
        Self {
            depth_radius,
            k,
            alpha,
            beta,
            cache: None,
        }
    }

    /// AlexNet constants: window 5 (radius 2), k = 2, alpha = 1e-4, beta = 0.75.
    pub fn alexnet_default() -> Self {
        Self::new(2, 2.0, 1e-4, 0.75)
    }

    pub fn forward(&mut self, input: &Tensor<E>) -> Result<Tensor<E>, NnError> {
        let [n, c, h, w] = input.dims4()?;
        let plane = h * w;
        let r = self.depth_radius;
        let data = input.data();
        let mut denom = vec![0.0f64; data.len()];
        let mut denom_pow = vec![0.0f64; data.len()];
        let mut out = Tensor::zeros(input.shape().to_vec());

        let mut sq = vec![0.0f64; c * plane];
        let mut acc = vec![0.0f64; plane];
        for img in 0..n {
            let base = img * c * plane;
            for (s, v) in sq.iter_mut().zip(&data[base..base + c * plane]) {
                let v = v.to_f64();
                *s = v * v;
            }
            acc.fill(0.0);
            for ch in 0..=r.min(c - 1) {
                let row = &sq[ch * plane..(ch + 1) * plane];
                for (a, s) in acc.iter_mut().zip(row) {
                    *a += s;
                }
            }
            for ch in 0..c {
                let offset = base + ch * plane;
                for p in 0..plane {
                    let d = self.k + self.alpha * acc[p];
                    let dp = pow_neg_beta(d, self.beta);
                    denom[offset + p] = d;
                    denom_pow[offset + p] = dp;
                    out.data_mut()[offset + p] = E::from_f64(data[offset + p].to_f64() * dp);
                }
                // Slide the channel window: add ch+r+1, drop ch-r.
                if ch + r + 1 < c {
                    let row = &sq[(ch + r + 1) * plane..(ch + r + 2) * plane];
                    for (a, s) in acc.iter_mut().zip(row) {
                        *a += s;
                    }
                }
                if ch >= r {
                    let row = &sq[(ch - r) * plane..(ch - r + 1) * plane];
                    for (a, s) in acc.iter_mut().zip(row) {
                        *a -= s;
                    }
                }
            }
        }

        self.cache = Some(LrnCache {
            input: input.clone(),
            denom,
            denom_pow,
        });
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<E>) -> Result<Tensor<E>, NnError> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| NnError::Usage("lrn backward called before forward".into()))?;
        if grad_out.shape() != cache.input.shape() {
            return Err(NnError::Shape(format!(
                "grad shape {:?} does not match cached input shape {:?}",
                grad_out.shape(),
                cache.input.shape()
            )));
        }
        let [n, c, h, w] = cache.input.dims4()?;
        let plane = h * w;
        let r = self.depth_radius;
        let a = cache.input.data();
        let g = grad_out.data();
        let mut grad_in = Tensor::zeros(cache.input.shape().to_vec());

        // d b_c / d a_j = delta_cj * D_c^-beta
        //              - 2 alpha beta a_c a_j D_c^-(beta+1)  for j in window(c),
        // with D^-(beta+1) = D^-beta / D from the forward cache.
        let mut t = vec![0.0f64; c * plane];
        let mut acc = vec![0.0f64; plane];
        for img in 0..n {
            let base = img * c * plane;
            for (i, slot) in t.iter_mut().enumerate() {
                let idx = base + i;
                *slot = g[idx].to_f64() * a[idx].to_f64() * cache.denom_pow[idx]
                    / cache.denom[idx];
            }
            acc.fill(0.0);
            for ch in 0..=r.min(c - 1) {
                let row = &t[ch * plane..(ch + 1) * plane];
                for (acc_v, t_v) in acc.iter_mut().zip(row) {
                    *acc_v += t_v;
                }
            }
            for ch in 0..c {
                let offset = base + ch * plane;
                for (p, acc_v) in acc.iter().enumerate() {
                    let idx = offset + p;
                    let direct = g[idx].to_f64() * cache.denom_pow[idx];
                    let value =
                        direct - 2.0 * self.alpha * self.beta * a[idx].to_f64() * acc_v;
                    grad_in.data_mut()[idx] = E::from_f64(value);
                }
                if ch + r + 1 < c {
                    let row = &t[(ch + r + 1) * plane..(ch + r + 2) * plane];
                    for (acc_v, t_v) in acc.iter_mut().zip(row) {
                        *acc_v += t_v;
                    }
                }
                if ch >= r {
                    let row = &t[(ch - r) * plane..(ch - r + 1) * plane];
                    for (acc_v, t_v) in acc.iter_mut().zip(row) {
                        *acc_v -= t_v;
                    }
                }
            }
        }
        Ok(grad_in)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_stays_zero() {
        let mut lrn = Lrn::alexnet_default();
        let out = lrn.forward(&Tensor::<f32>::zeros(vec![1, 8, 3, 3])).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn alpha_zero_and_unit_k_is_identity() {
        let mut lrn = Lrn::new(2, 1.0, 0.0, 0.9);
        let input = Tensor::new(vec![1, 1, 1, 2], vec![3.5f32, -1.25]).unwrap();
        let out = lrn.forward(&input).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn normalizes_against_channel_neighborhood() {
        // Two channels, radius 1: both see sum_sq = 3^2 + 4^2 = 25.
        let mut lrn = Lrn::new(1, 1.0, 1.0, 1.0);
        let input = Tensor::new(vec![1, 2, 1, 1], vec![3.0f32, 4.0]).unwrap();
        let out = lrn.forward(&input).unwrap();
        assert!((out.data()[0] - 3.0 / 26.0).abs() < 1e-6);
        assert!((out.data()[1] - 4.0 / 26.0).abs() < 1e-6);
    }

    #[test]
    fn sliding_window_matches_direct_summation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let (n, c, h, w) = (2, 7, 3, 4);
        let input = Tensor::<f64>::from_fn(vec![n, c, h, w], |_| rng.gen_range(-1.5..1.5));
        let mut lrn = Lrn::new(2, 2.0, 0.3, 0.6);
        let out = lrn.forward(&input).unwrap();
        // Direct evaluation per element.
        let plane = h * w;
        for img in 0..n {
            for ch in 0..c {
                for p in 0..plane {
                    let lo = ch.saturating_sub(2);
                    let hi = (ch + 2).min(c - 1);
                    let mut sum_sq = 0.0;
                    for cc in lo..=hi {
                        let v = input.data()[img * c * plane + cc * plane + p];
                        sum_sq += v * v;
                    }
                    let idx = img * c * plane + ch * plane + p;
                    let expected = input.data()[idx] * (2.0 + 0.3 * sum_sq).powf(-0.6);
                    assert!((out.data()[idx] - expected).abs() < 1e-12);
                }
            }
        }
    }
}
