//! Max pooling with argmax routing, plus global average pooling.

use rayon::prelude::*;

use super::conv::conv_output_extent;
use super::tensor::{Element, Tensor};
use super::NnError;

/// Max pooling over square windows. Windows that would extend past the
/// (optionally padded) border are dropped — floor semantics. Padding cells
/// behave like negative infinity and can never win the argmax, which keeps
/// the tie rule (lowest row-major index) on real pixels.
pub struct MaxPool2d<E: Element = f32> {
    window: usize,
    stride: usize,
    pad: usize,
    cache: Option<PoolCache>,
    _marker: std::marker::PhantomData<E>,
}

struct PoolCache {
    in_shape: [usize; 4],
    out_shape: [usize; 4],
    /// Plane-relative row-major index (`iy * W + ix`) of each window winner.
    argmax: Vec<usize>,
}

impl<E: Element> MaxPool2d<E> {
    pub fn new(window: usize, stride: usize, pad: usize) -> Result<Self, NnError> {
        if window == 0 || stride == 0 {
            return Err(NnError::Config("pool window and stride must be >= 1".into()));
        }
        if pad >= window {
            return Err(NnError::Config(format!(
                "pool pad {pad} must be smaller than window {window}"
            )));
        }
        Ok(Self {
            window,
            stride,
            pad,
            cache: None,
            _marker: std::marker::PhantomData,
        })
    }

    pub fn forward(&mut self, input: &Tensor<E>) -> Result<Tensor<E>, NnError> {
        let [n, c, h, w] = input.dims4()?;
        let oh = conv_output_extent(h, self.window, self.stride, self.pad);
        let ow = conv_output_extent(w, self.window, self.stride, self.pad);
        let (oh, ow) = match (oh, ow) {
            (Some(oh), Some(ow)) => (oh, ow),
            _ => {
                return Err(NnError::Shape(format!(
                    "pool window {0}x{0} larger than {h}x{w} spatial extent (pad {1})",
                    self.window, self.pad
                )))
            }
        };

        let mut output = Tensor::zeros(vec![n, c, oh, ow]);
        let mut argmax = vec![0usize; n * c * oh * ow];
        let (window, stride, pad) = (self.window, self.stride, self.pad);
        let in_plane = c * h * w;
        let out_plane = c * oh * ow;

        output
            .data_mut()
            .par_chunks_mut(out_plane)
            .zip(argmax.par_chunks_mut(out_plane))
            .zip(input.data().par_chunks(in_plane))
            .for_each(|((out_img, arg_img), in_img)| {
                let mut o = 0;
                for ch in 0..c {
                    let plane = &in_img[ch * h * w..(ch + 1) * h * w];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best: Option<(E, usize)> = None;
                            for ky in 0..window {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..window {
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let idx = iy as usize * w + ix as usize;
                                    let v = plane[idx];
                                    // Strict > keeps the first (lowest
                                    // row-major) cell on ties.
                                    if best.is_none_or(|(b, _)| v > b) {
                                        best = Some((v, idx));
                                    }
                                }
                            }
                            let (v, idx) = best.expect("window always overlaps the image");
                            out_img[o] = v;
                            arg_img[o] = idx;
                            o += 1;
                        }
                    }
                }
            });

        self.cache = Some(PoolCache {
            in_shape: [n, c, h, w],
            out_shape: [n, c, oh, ow],
            argmax,
        });
        Ok(output)
    }

    /// Routes each grad element to its argmax position; everywhere else 0.
    pub fn backward(&mut self, grad_out: &Tensor<E>) -> Result<Tensor<E>, NnError> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| NnError::Usage("pool backward called before forward".into()))?;
        if grad_out.shape() != cache.out_shape {
            return Err(NnError::Shape(format!(
                "grad shape {:?} does not match argmax map shape {:?}",
                grad_out.shape(),
                cache.out_shape
            )));
        }
        let [_, c, h, w] = cache.in_shape;
        let [_, _, oh, ow] = cache.out_shape;
        let in_plane = c * h * w;
        let out_plane = c * oh * ow;

        let mut grad_in = Tensor::zeros(cache.in_shape.to_vec());
        grad_in
            .data_mut()
            .par_chunks_mut(in_plane)
            .zip(grad_out.data().par_chunks(out_plane))
            .zip(cache.argmax.par_chunks(out_plane))
            .for_each(|((gin_img, gout_img), arg_img)| {
                let mut o = 0;
                for ch in 0..c {
                    let plane = &mut gin_img[ch * h * w..(ch + 1) * h * w];
                    for _ in 0..oh * ow {
                        // += because overlapping windows may share a winner.
                        plane[arg_img[o]] += gout_img[o];
                        o += 1;
                    }
                }
            });
        Ok(grad_in)
    }

    /// Argmax map of the last forward pass (plane-relative indices).
    pub fn argmax(&self) -> Option<&[usize]> {
        self.cache.as_ref().map(|c| c.argmax.as_slice())
    }
}

/// Collapses each channel plane to its mean: `[N, C, H, W] -> [N, C]`.
pub struct GlobalAvgPool<E: Element = f32> {
    in_shape: Option<[usize; 4]>,
    _marker: std::marker::PhantomData<E>,
}

impl<E: Element> Default for GlobalAvgPool<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> GlobalAvgPool<E> {
    pub fn new() -> Self {
        Self {
            in_shape: None,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn forward(&mut self, input: &Tensor<E>) -> Result<Tensor<E>, NnError> {
        let [n, c, h, w] = input.dims4()?;
        let plane = h * w;
        let mut out = Tensor::zeros(vec![n, c]);
        let data = input.data();
        for i in 0..n * c {
            let mut acc = 0.0f64;
            for v in &data[i * plane..(i + 1) * plane] {
                acc += v.to_f64();
            }
            out.data_mut()[i] = E::from_f64(acc / plane as f64);
        }
        self.in_shape = Some([n, c, h, w]);
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<E>) -> Result<Tensor<E>, NnError> {
        let [n, c, h, w] = self
            .in_shape
            .ok_or_else(|| NnError::Usage("global avg pool backward before forward".into()))?;
        if grad_out.shape() != [n, c] {
            return Err(NnError::Shape(format!(
                "grad shape {:?} does not match pooled shape {:?}",
                grad_out.shape(),
                [n, c]
            )));
        }
        let plane = h * w;
        let mut grad_in = Tensor::zeros(vec![n, c, h, w]);
        for i in 0..n * c {
            let g = E::from_f64(grad_out.data()[i].to_f64() / plane as f64);
            grad_in.data_mut()[i * plane..(i + 1) * plane].fill(g);
        }
        Ok(grad_in)
    }
}
