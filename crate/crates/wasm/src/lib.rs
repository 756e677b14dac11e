//! Browser bindings: the enhancement kernel, enhancement of an RGBA canvas
//! and the contrastive loss of a blurred synthetic image against itself.
//!
//! The plain functions carry the logic and are tested natively; the
//! `#[wasm_bindgen]` wrappers only convert errors.

use decloss::toy::{gaussian_blur, synthetic_dataset};
use decloss::{
    decloss, enhance_tensor, gaussian_kernel, ContrastConfig, EnhanceConfig, Tape, Tensor,
};
use wasm_bindgen::prelude::*;

fn enhance_cfg(alpha: f64, mu: f64) -> EnhanceConfig {
    EnhanceConfig {
        alpha,
        mu: (mu > 0.0).then_some(mu),
        ..Default::default()
    }
}

/// Kernel weights for an axis of length `n`; `mu <= 0` selects `n / 4`.
pub fn kernel_values(n: usize, alpha: f64, mu: f64) -> Result<Vec<f64>, String> {
    gaussian_kernel(n, &enhance_cfg(alpha, mu)).map_err(|e| e.to_string())
}

fn rgba_to_tensor(rgba: &[u8], width: usize, height: usize) -> Result<Tensor, String> {
    let n = width * height;
    if n == 0 || rgba.len() != 4 * n {
        return Err(format!(
            "expected {} RGBA bytes for {width}x{height}, got {}",
            4 * n,
            rgba.len()
        ));
    }
    let mut data = vec![0.0; 3 * n];
    for (i, px) in rgba.chunks_exact(4).enumerate() {
        for c in 0..3 {
            data[c * n + i] = px[c] as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, height, width], data).map_err(|e| e.to_string())
}

/// `[3, H, W]` in `[0, 1]` to opaque RGBA, with values outside the range clamped.
fn tensor_to_rgba(t: &Tensor) -> Vec<u8> {
    let n = t.shape()[1] * t.shape()[2];
    let d = t.data();
    let mut out = vec![255u8; 4 * n];
    for i in 0..n {
        for c in 0..3 {
            out[4 * i + c] = (d[c * n + i] * 255.0).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// Enhances an RGBA image. The result is min-max stretched to the display
/// range and then multiplied by `gain` around mid-grey.
pub fn enhance_pixels(
    rgba: &[u8],
    width: usize,
    height: usize,
    alpha: f64,
    mu: f64,
    gain: f64,
) -> Result<Vec<u8>, String> {
    let img = rgba_to_tensor(rgba, width, height)?;
    let e = enhance_tensor(&img, &enhance_cfg(alpha, mu)).map_err(|e| e.to_string())?;
    let (lo, hi) = e
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
            (l.min(v), h.max(v))
        });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let shown = Tensor::from_fn(e.shape(), |i| {
        0.5 + gain * ((e.data()[i] - lo) / span - 0.5)
    });
    Ok(tensor_to_rgba(&shown))
}

/// A seeded synthetic test image as RGBA.
pub fn synthetic_pixels(size: usize, seed: u64) -> Result<Vec<u8>, String> {
    if size == 0 {
        return Err("size must be positive".into());
    }
    Ok(tensor_to_rgba(&synthetic_dataset(1, size, seed)[0]))
}

/// Contrastive loss of the image blurred by each sigma against the sharp
/// image. `NaN` marks a blur level whose batch has no negative pairs.
pub fn blur_curve(
    rgba: &[u8],
    width: usize,
    height: usize,
    patch: usize,
    sigmas: &[f64],
) -> Result<Vec<f64>, String> {
    if patch == 0 || !width.is_multiple_of(patch) || !height.is_multiple_of(patch) {
        return Err(format!(
            "{width}x{height} is not a multiple of patch size {patch}"
        ));
    }
    let hr = rgba_to_tensor(rgba, width, height)?;
    let shape = [1, 3, height, width];
    let hr4 = hr.reshape(&shape).map_err(|e| e.to_string())?;
    let ccfg = ContrastConfig {
        patch_size: patch,
        ..Default::default()
    };
    sigmas
        .iter()
        .map(|&s| {
            let sr = gaussian_blur(&hr, s).map_err(|e| e.to_string())?;
            let tape = Tape::new();
            let loss = decloss(
                tape.var(sr.reshape(&shape).map_err(|e| e.to_string())?),
                tape.constant(hr4.clone()),
                &EnhanceConfig::default(),
                &ccfg,
            )
            .and_then(|v| v.item());
            Ok(loss.unwrap_or(f64::NAN))
        })
        .collect()
}

fn js<T>(r: Result<T, String>) -> Result<T, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn kernel_curve(n: usize, alpha: f64, mu: f64) -> Result<Vec<f64>, JsError> {
    js(kernel_values(n, alpha, mu))
}

#[wasm_bindgen]
pub fn enhance_image(
    rgba: &[u8],
    width: usize,
    height: usize,
    alpha: f64,
    mu: f64,
    gain: f64,
) -> Result<Vec<u8>, JsError> {
    js(enhance_pixels(rgba, width, height, alpha, mu, gain))
}

#[wasm_bindgen]
pub fn synthetic_image(size: usize, seed: u64) -> Result<Vec<u8>, JsError> {
    js(synthetic_pixels(size, seed))
}

#[wasm_bindgen]
pub fn loss_vs_blur(
    rgba: &[u8],
    width: usize,
    height: usize,
    patch: usize,
    sigmas: &[f64],
) -> Result<Vec<f64>, JsError> {
    js(blur_curve(rgba, width, height, patch, sigmas))
}
