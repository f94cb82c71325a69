//! Channel-axis concatenation and its adjoint split, used to join the
//! parallel branches of an inception block.

use super::tensor::{Element, Tensor};
use super::NnError;

/// Concatenate `[N, Ci, H, W]` tensors along the channel axis in argument
/// order. All inputs must share N, H and W.
pub fn concat_channels<E: Element>(inputs: &[&Tensor<E>]) -> Result<Tensor<E>, NnError> {
    if inputs.is_empty() {
        return Err(NnError::Validation("concat needs at least one input".into()));
    }
    let [n, _, h, w] = inputs[0].dims4()?;
    let mut channels = Vec::with_capacity(inputs.len());
    for (branch, t) in inputs.iter().enumerate() {
        let [tn, tc, th, tw] = t.dims4()?;
        if (tn, th, tw) != (n, h, w) {
            return Err(NnError::Shape(format!(
                "branch {branch} has shape {:?}, incompatible with branch 0 shape {:?}",
                t.shape(),
                inputs[0].shape()
            )));
        }
        channels.push(tc);
    }
    let total: usize = channels.iter().sum();
    let mut out = Tensor::zeros(vec![n, total, h, w]);
    let plane = h * w;
    for img in 0..n {
        let mut c_off = 0;
        for (t, &tc) in inputs.iter().zip(&channels) {
            let src = &t.data()[img * tc * plane..(img + 1) * tc * plane];
            let dst_start = (img * total + c_off) * plane;
            out.data_mut()[dst_start..dst_start + tc * plane].copy_from_slice(src);
            c_off += tc;
        }
    }
    Ok(out)
}

/// Adjoint of [`concat_channels`]: slice a gradient back into per-branch
/// tensors with the given channel counts.
pub fn split_channels<E: Element>(
    grad: &Tensor<E>,
    channels: &[usize],
) -> Result<Vec<Tensor<E>>, NnError> {
    let [n, c, h, w] = grad.dims4()?;
    let total: usize = channels.iter().sum();
    if total != c {
        return Err(NnError::Shape(format!(
            "branch channels {channels:?} sum to {total} but the gradient has {c}"
        )));
    }
    let plane = h * w;
    let mut parts: Vec<Tensor<E>> = channels
        .iter()
        .map(|&tc| Tensor::zeros(vec![n, tc, h, w]))
        .collect();
    for img in 0..n {
        let mut c_off = 0;
        for (part, &tc) in parts.iter_mut().zip(channels) {
            let src_start = (img * total + c_off) * plane;
            part.data_mut()[img * tc * plane..(img + 1) * tc * plane]
                .copy_from_slice(&grad.data()[src_start..src_start + tc * plane]);
            c_off += tc;
        }
    }
    Ok(parts)
}
