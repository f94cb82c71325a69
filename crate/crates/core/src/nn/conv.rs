//! 2-d convolution (cross-correlation convention, zero padding) lowered to
//! per-image im2col plus a GEMM call.

use rayon::prelude::*;

use super::tensor::{Element, Tensor};
use super::{LayerParams, NnError, REDUCE_CHUNK};

/// Spatial extent after a windowed op: `floor((in + 2*pad - k)/stride) + 1`.
/// `None` when the window does not fit the padded input.
pub fn conv_output_extent(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if k == 0 || stride == 0 || padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

pub struct Conv2d<E: Element = f32> {
    pub params: LayerParams<E>,
    stride: usize,
    pad: usize,
    kernel: usize,
    in_channels: usize,
    out_channels: usize,
    cached_input: Option<Tensor<E>>,
}

impl<E: Element> Conv2d<E> {
    /// Weights must be `[Cout, Cin, K, K]`, bias `[Cout]`.
    pub fn new(params: LayerParams<E>, stride: usize, pad: usize) -> Result<Self, NnError> {
        let [out_channels, in_channels, kh, kw] = params.weights.dims4()?;
        if kh != kw {
            return Err(NnError::Config(format!(
                "only square kernels are supported, got {kh}x{kw}"
            )));
        }
        if params.bias.shape() != [out_channels] {
            return Err(NnError::Shape(format!(
                "bias shape {:?} does not match {out_channels} output channels",
                params.bias.shape()
            )));
        }
        if stride == 0 {
            return Err(NnError::Config("stride must be >= 1".into()));
        }
        Ok(Self {
            params,
            stride,
            pad,
            kernel: kh,
            in_channels,
            out_channels,
            cached_input: None,
        })
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    fn output_dims(&self, input: &Tensor<E>) -> Result<[usize; 4], NnError> {
        let [n, c, h, w] = input.dims4()?;
        if c != self.in_channels {
            return Err(NnError::Shape(format!(
                "input shape {:?} has {c} channels but kernel shape {:?} expects {}",
                input.shape(),
                self.params.weights.shape(),
                self.in_channels
            )));
        }
        let oh = conv_output_extent(h, self.kernel, self.stride, self.pad);
        let ow = conv_output_extent(w, self.kernel, self.stride, self.pad);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok([n, self.out_channels, oh, ow]),
            _ => Err(NnError::Shape(format!(
                "{0}x{0} kernel with pad {1} does not fit {h}x{w} input",
                self.kernel, self.pad
            ))),
        }
    }

    pub fn forward(&mut self, input: &Tensor<E>) -> Result<Tensor<E>, NnError> {
        let [n, _, h, w] = input.dims4()?;
        let [_, cout, oh, ow] = self.output_dims(input)?;
        let (cin, k, stride, pad) = (self.in_channels, self.kernel, self.stride, self.pad);
        let ckk = cin * k * k;
        let in_plane = cin * h * w;
        let out_plane = cout * oh * ow;

        let mut output = Tensor::zeros(vec![n, cout, oh, ow]);
        let weights = self.params.weights.data();
        let bias = self.params.bias.data();
        // Chunks of images share one im2col scratch buffer; it is fully
        // overwritten per image, so no re-zeroing is needed.
        output
            .data_mut()
            .par_chunks_mut(out_plane * REDUCE_CHUNK)
            .zip(input.data().par_chunks(in_plane * REDUCE_CHUNK))
            .for_each(|(out_chunk, in_chunk)| {
                let mut col = vec![E::ZERO; ckk * oh * ow];
                for (out_img, in_img) in
                    out_chunk.chunks_mut(out_plane).zip(in_chunk.chunks(in_plane))
                {
                    im2col(in_img, cin, h, w, k, stride, pad, oh, ow, &mut col);
                    unsafe {
                        E::gemm(
                            cout,
                            ckk,
                            oh * ow,
                            E::ONE,
                            weights.as_ptr(),
                            ckk as isize,
                            1,
                            col.as_ptr(),
                            (oh * ow) as isize,
                            1,
                            E::ZERO,
                            out_img.as_mut_ptr(),
                            (oh * ow) as isize,
                            1,
                        );
                    }
                    for c in 0..cout {
                        let b = bias[c];
                        for v in &mut out_img[c * oh * ow..(c + 1) * oh * ow] {
                            *v += b;
                        }
                    }
                }
            });

        self.cached_input = Some(input.clone());
        Ok(output)
    }

    /// Returns dL/d(input) and accumulates dL/d(weights), dL/d(bias) into
    /// `params`. `compute_input_grad` can be false for the first layer of a
    /// network, where the input gradient is never consumed.
    pub fn backward(
        &mut self,
        grad_out: &Tensor<E>,
        compute_input_grad: bool,
    ) -> Result<Tensor<E>, NnError> {
        let input = self
            .cached_input
            .as_ref()
            .ok_or_else(|| NnError::Usage("conv backward called before forward".into()))?;
        let expected = self.output_dims(input)?;
        if grad_out.shape() != expected {
            return Err(NnError::Shape(format!(
                "grad shape {:?} does not match forward output shape {:?}",
                grad_out.shape(),
                expected
            )));
        }
        let [_, _, h, w] = input.dims4()?;
        let [_, cout, oh, ow] = expected;
        let (cin, k, stride, pad) = (self.in_channels, self.kernel, self.stride, self.pad);
        let ckk = cin * k * k;
        let ohw = oh * ow;
        let in_plane = cin * h * w;
        let out_plane = cout * ohw;

        // Weight and bias gradients: per-chunk partials combined in chunk
        // order, so the result does not depend on the worker count.
        let chunk_inputs: Vec<(&[E], &[E])> = input
            .data()
            .chunks(in_plane * REDUCE_CHUNK)
            .zip(grad_out.data().chunks(out_plane * REDUCE_CHUNK))
            .collect();
        let partials: Vec<(Vec<E>, Vec<f64>)> = chunk_inputs
            .into_par_iter()
            .map(|(in_chunk, gout_chunk)| {
                let mut dw = vec![E::ZERO; cout * ckk];
                let mut db = vec![0.0f64; cout];
                let mut col = vec![E::ZERO; ckk * ohw];
                for (in_img, gout_img) in
                    in_chunk.chunks(in_plane).zip(gout_chunk.chunks(out_plane))
                {
                    im2col(in_img, cin, h, w, k, stride, pad, oh, ow, &mut col);
                    // dW += gout_img [cout x ohw] @ col^T [ohw x ckk]
                    unsafe {
                        E::gemm(
                            cout,
                            ohw,
                            ckk,
                            E::ONE,
                            gout_img.as_ptr(),
                            ohw as isize,
                            1,
                            col.as_ptr(),
                            1,
                            ohw as isize,
                            E::ONE,
                            dw.as_mut_ptr(),
                            ckk as isize,
                            1,
                        );
                    }
                    for c in 0..cout {
                        let mut s = 0.0f64;
                        for v in &gout_img[c * ohw..(c + 1) * ohw] {
                            s += v.to_f64();
                        }
                        db[c] += s;
                    }
                }
                (dw, db)
            })
            .collect();

        {
            let wg = self.params.weight_grad.data_mut();
            for i in 0..wg.len() {
                let mut acc = 0.0f64;
                for (dw, _) in &partials {
                    acc += dw[i].to_f64();
                }
                wg[i] += E::from_f64(acc);
            }
            let bg = self.params.bias_grad.data_mut();
            for c in 0..cout {
                let mut acc = 0.0f64;
                for (_, db) in &partials {
                    acc += db[c];
                }
                bg[c] += E::from_f64(acc);
            }
        }

        if !compute_input_grad {
            return Ok(Tensor::zeros(input.shape().to_vec()));
        }

        let mut grad_in = Tensor::zeros(input.shape().to_vec());
        let weights = self.params.weights.data();
        grad_in
            .data_mut()
            .par_chunks_mut(in_plane * REDUCE_CHUNK)
            .zip(grad_out.data().par_chunks(out_plane * REDUCE_CHUNK))
            .for_each(|(gin_chunk, gout_chunk)| {
                let mut dcol = vec![E::ZERO; ckk * ohw];
                for (gin_img, gout_img) in
                    gin_chunk.chunks_mut(in_plane).zip(gout_chunk.chunks(out_plane))
                {
                    // dcol = W^T [ckk x cout] @ gout_img [cout x ohw]
                    unsafe {
                        E::gemm(
                            ckk,
                            cout,
                            ohw,
                            E::ONE,
                            weights.as_ptr(),
                            1,
                            ckk as isize,
                            gout_img.as_ptr(),
                            ohw as isize,
                            1,
                            E::ZERO,
                            dcol.as_mut_ptr(),
                            ohw as isize,
                            1,
                        );
                    }
                    col2im(&dcol, cin, h, w, k, stride, pad, oh, ow, gin_img);
                }
            });
        Ok(grad_in)
    }
}

/// Unfold one image `[Cin, H, W]` into `[Cin*K*K, OH*OW]` columns, padding
/// with zeros.
#[allow(clippy::too_many_arguments)]
fn im2col<E: Element>(
    img: &[E],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    col: &mut [E],
) {
    let ohw = oh * ow;
    let mut row = 0;
    for c in 0..cin {
        let plane = &img[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut col[row * ohw..(row + 1) * ohw];
                let mut o = 0;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        dst[o..o + ow].fill(E::ZERO);
                        o += ow;
                        continue;
                    }
                    let src = &plane[iy as usize * w..iy as usize * w + w];
                    if stride == 1 && pad <= kx {
                        // Entire row is in bounds except possibly the tail.
                        let ix0 = kx - pad;
                        let run = ow.min(w.saturating_sub(ix0));
                        dst[o..o + run].copy_from_slice(&src[ix0..ix0 + run]);
                        dst[o + run..o + ow].fill(E::ZERO);
                        o += ow;
                    } else {
                        for ox in 0..ow {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            dst[o] = if ix < 0 || ix >= w as isize {
                                E::ZERO
                            } else {
                                src[ix as usize]
                            };
                            o += 1;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back onto the image.
#[allow(clippy::too_many_arguments)]
fn col2im<E: Element>(
    col: &[E],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    img: &mut [E],
) {
    let ohw = oh * ow;
    let mut row = 0;
    for c in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let src = &col[row * ohw..(row + 1) * ohw];
                let mut o = 0;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        o += ow;
                        continue;
                    }
                    let base = c * h * w + iy as usize * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            img[base + ix as usize] += src[o];
                        }
                        o += 1;
                    }
                }
                row += 1;
            }
        }
    }
}
