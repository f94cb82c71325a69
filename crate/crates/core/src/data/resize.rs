//! Bilinear resampling with half-pixel centers.

use super::{DataError, GrayImage};

/// Resize to `target_w x target_h`. Sample coordinates use half-pixel
/// centers (`src = (dst + 0.5) * scale - 0.5`) clamped to the image, and
/// the interpolated value is rounded to the nearest 8-bit level.
pub fn resize_bilinear(
    image: &GrayImage,
    target_w: usize,
    target_h: usize,
) -> Result<GrayImage, DataError> {
    if target_w == 0 || target_h == 0 {
        return Err(DataError::Validation(format!(
            "resize target must be positive, got {target_w}x{target_h}"
        )));
    }
    let (w, h) = (image.width(), image.height());
    if (w, h) == (target_w, target_h) {
        return Ok(image.clone());
    }
    let scale_x = w as f64 / target_w as f64;
    let scale_y = h as f64 / target_h as f64;
    let mut pixels = vec![0u8; target_w * target_h];
    for ty in 0..target_h {
        let sy = ((ty as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for tx in 0..target_w {
            let sx = ((tx as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            let top = image.get(x0, y0) as f64 * (1.0 - fx) + image.get(x1, y0) as f64 * fx;
            let bottom = image.get(x0, y1) as f64 * (1.0 - fx) + image.get(x1, y1) as f64 * fx;
            let value = top * (1.0 - fy) + bottom * fy;
            pixels[ty * target_w + tx] = value.round().clamp(0.0, 255.0) as u8;
        }
    }
    GrayImage::new(target_w, target_h, pixels)
}
