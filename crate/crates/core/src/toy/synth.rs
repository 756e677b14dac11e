//! Seeded synthetic HR images: smooth gradients, sharp-edged shapes and
//! fine texture, clamped to `[0, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn rgb<R: Rng>(rng: &mut R) -> [f64; 3] {
    [rng.gen(), rng.gen(), rng.gen()]
}

/// One `[3, size, size]` image drawn from `rng`.
pub fn synthetic_image<R: Rng>(size: usize, rng: &mut R) -> Tensor {
    let n = size as f64;
    let mut img = Tensor::zeros(&[3, size, size]);

    // Background: linear ramp plus a low-frequency ripple.
    let base = rgb(rng);
    let gx = rgb(rng);
    let gy = rgb(rng);
    let freq = rng.gen_range(0.5..2.5);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    {
        let d = img.data_mut();
        for c in 0..3 {
            for y in 0..size {
                for x in 0..size {
                    let (u, v) = (x as f64 / n, y as f64 / n);
                    let ripple = 0.1 * (std::f64::consts::TAU * freq * (u + 0.7 * v) + phase).sin();
                    d[(c * size + y) * size + x] = 0.3 * base[c]
                        + 0.35 * (gx[c] - 0.5) * u
                        + 0.35 * (gy[c] - 0.5) * v
                        + 0.3
                        + ripple;
                }
            }
        }
    }

    // Hard-edged shapes: discs, rectangles and half-planes.
    let shapes = rng.gen_range(3..7);
    for _ in 0..shapes {
        let color = rgb(rng);
        let kind = rng.gen_range(0..3);
        let (cx, cy) = (rng.gen_range(0.0..n), rng.gen_range(0.0..n));
        let r = rng.gen_range(0.08..0.3) * n;
        let (hw, hh) = (rng.gen_range(0.05..0.3) * n, rng.gen_range(0.05..0.3) * n);
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let (ca, sa) = (angle.cos(), angle.sin());
        let d = img.data_mut();
        for y in 0..size {
            for x in 0..size {
                let (fx, fy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let inside = match kind {
                    0 => fx * fx + fy * fy <= r * r,
                    1 => fx.abs() <= hw && fy.abs() <= hh,
                    _ => fx * ca + fy * sa > 0.0 && (fx * fx + fy * fy) < (2.0 * r) * (2.0 * r),
                };
                if inside {
                    for (c, &col) in color.iter().enumerate() {
                        d[(c * size + y) * size + x] = col;
                    }
                }
            }
        }
    }

    // Texture: stripes in one region and per-pixel grain everywhere.
    let stripe_period = rng.gen_range(2.0..5.0);
    let (sx0, sy0) = (rng.gen_range(0.0..n * 0.6), rng.gen_range(0.0..n * 0.6));
    let extent = n * 0.4;
    let amp = rng.gen_range(0.08..0.2);
    let d = img.data_mut();
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64, y as f64);
            let stripe = if fx >= sx0 && fx < sx0 + extent && fy >= sy0 && fy < sy0 + extent {
                amp * (std::f64::consts::TAU * (fx + fy) / stripe_period).sin()
            } else {
                0.0
            };
            let grain = rng.gen_range(-0.03..0.03);
            for c in 0..3 {
                let v = &mut d[(c * size + y) * size + x];
                *v = (*v + stripe + grain).clamp(0.0, 1.0);
            }
        }
    }
    img
}

/// `count` images of `size x size`, reproducible from `seed`.
pub fn synthetic_dataset(count: usize, size: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| synthetic_image(size, &mut rng))
        .collect()
}

fn blur_rows(src: &[f64], rows: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let mut out = vec![0.0; src.len()];
    for row in 0..rows {
        let line = &src[row * w..(row + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let i = (x as i64 + k as i64 - r).clamp(0, w as i64 - 1) as usize;
                acc += kv * line[i];
            }
            out[row * w + x] = acc;
        }
    }
    out
}

/// Separable Gaussian blur of a `[C, H, W]` image with clamped borders.
pub fn gaussian_blur(image: &Tensor, sigma: f64) -> Result<Tensor> {
    let (c, h, w) = match image.shape() {
        &[c, h, w] => (c, h, w),
        s => return Err(Error::dim("gaussian_blur", s, &[0, 0, 0])),
    };
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Contract(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let mut out = Vec::with_capacity(image.numel());
    for plane in image.data().chunks(h * w) {
        let horiz = blur_rows(plane, h, w, &kernel);
        let mut t = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                t[x * h + y] = horiz[y * w + x];
            }
        }
        let vert = blur_rows(&t, w, h, &kernel);
        for y in 0..h {
            for x in 0..w {
                out.push(vert[x * h + y]);
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_is_seeded_and_in_range() {
        let a = synthetic_dataset(3, 32, 5);
        let b = synthetic_dataset(3, 32, 5);
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
        for img in &a {
            assert_eq!(img.shape(), &[3, 32, 32]);
            assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn blur_preserves_constants_and_smooths() {
        let c = Tensor::full(&[1, 6, 6], 0.4);
        let out = gaussian_blur(&c, 1.3).unwrap();
        assert!(out.max_abs_diff(&c).unwrap() < 1e-15);

        let mut spike = Tensor::zeros(&[1, 9, 9]);
        spike.data_mut()[40] = 1.0;
        let out = gaussian_blur(&spike, 1.0).unwrap();
        assert!((out.sum() - 1.0).abs() < 1e-12);
        assert!(out.data()[40] < 0.2);
        assert_eq!(gaussian_blur(&spike, 0.0).unwrap(), spike);
    }
}
