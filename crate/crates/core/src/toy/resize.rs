//! Separable cubic-convolution resampling (Catmull-Rom, `a = -0.5`).
//!
//! Pixel centres are aligned (`src = (dst + 0.5) / scale - 0.5`) and borders
//! are clamped. When shrinking, the kernel is stretched by the inverse scale
//! so every output pixel averages its whole source footprint.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const A: f64 = -0.5;

pub fn cubic_kernel(x: f64) -> f64 {
    let t = x.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Normalised taps `(source index, weight)` for each output coordinate.
fn taps(input: usize, output: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = output as f64 / input as f64;
    let support = scale.min(1.0);
    let radius = 2.0 / support;
    (0..output)
        .map(|o| {
            let center = (o as f64 + 0.5) / scale - 0.5;
            let lo = (center - radius).floor() as i64;
            let hi = (center + radius).ceil() as i64;
            let mut t: Vec<(usize, f64)> = (lo..=hi)
                .filter_map(|i| {
                    let w = cubic_kernel((center - i as f64) * support);
                    (w != 0.0).then(|| (i.clamp(0, input as i64 - 1) as usize, w))
                })
                .collect();
            let total: f64 = t.iter().map(|(_, w)| w).sum();
            for (_, w) in &mut t {
                *w /= total;
            }
            t
        })
        .collect()
}

/// Resamples every row of a `rows x w` plane.
fn resample_rows(src: &[f64], rows: usize, w: usize, taps: &[Vec<(usize, f64)>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * taps.len());
    for r in 0..rows {
        let line = &src[r * w..(r + 1) * w];
        for t in taps {
            // Offsets from the first tap keep constant regions exact.
            let anchor = line[t[0].0];
            let acc: f64 = t.iter().map(|&(i, wt)| wt * (line[i] - anchor)).sum();
            out.push(anchor + acc);
        }
    }
    out
}

fn transpose(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

/// Resamples a `[C, H, W]` image to `out_h x out_w`.
pub fn resize_to(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = match image.shape() {
        &[c, h, w] => (c, h, w),
        s => return Err(Error::dim("bicubic_resize", s, &[0, 0, 0])),
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::Contract(format!(
            "target extent {out_h}x{out_w} must be positive"
        )));
    }
    let tw = taps(w, out_w);
    let th = taps(h, out_h);
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for plane in image.data().chunks(h * w) {
        let horiz = resample_rows(plane, h, w, &tw);
        let cols = resample_rows(&transpose(&horiz, h, out_w), out_w, h, &th);
        out.extend(transpose(&cols, out_w, out_h));
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// Resamples by `scale`; output extents are `round(H * scale)`.
pub fn bicubic_resize(image: &Tensor, scale: f64) -> Result<Tensor> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Contract(format!(
            "scale must be positive, got {scale}"
        )));
    }
    let shape = image.shape();
    if shape.len() != 3 {
        return Err(Error::dim("bicubic_resize", shape, &[0, 0, 0]));
    }
    let oh = (shape[1] as f64 * scale).round() as usize;
    let ow = (shape[2] as f64 * scale).round() as usize;
    resize_to(image, oh, ow)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_shape() {
        assert_eq!(cubic_kernel(0.0), 1.0);
        assert_eq!(cubic_kernel(1.0), 0.0);
        assert_eq!(cubic_kernel(2.0), 0.0);
        assert!((cubic_kernel(0.5) - 0.5625).abs() < 1e-15);
        assert!((cubic_kernel(1.5) + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn constant_stays_constant() {
        let img = Tensor::full(&[3, 9, 7], 0.3141);
        for (oh, ow) in [(3, 2), (18, 14), (5, 11)] {
            let out = resize_to(&img, oh, ow).unwrap();
            assert!(out.data().iter().all(|&v| v == 0.3141));
        }
    }

    #[test]
    fn unit_scale_is_identity() {
        let img = Tensor::from_fn(&[2, 6, 5], |i| ((i * 7919) % 97) as f64 / 97.0);
        let out = bicubic_resize(&img, 1.0).unwrap();
        assert!(out.max_abs_diff(&img).unwrap() < 1e-12);
    }

    #[test]
    fn bad_targets() {
        let img = Tensor::zeros(&[1, 4, 4]);
        assert!(resize_to(&img, 0, 3).is_err());
        assert!(bicubic_resize(&img, 0.1).is_err());
        assert!(bicubic_resize(&img, -1.0).is_err());
    }
}
