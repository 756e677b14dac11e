use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reported for identical inputs in place of an infinite PSNR.
pub const PSNR_CLAMP_DB: f64 = 100.0;

/// `20 log10(max / RMSE)` in dB.
pub fn psnr(a: &Tensor, b: &Tensor, max_value: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dim("psnr", a.shape(), b.shape()));
    }
    if !(max_value > 0.0) {
        return Err(Error::Config(format!(
            "max_value must be > 0, got {max_value}"
        )));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.numel() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CLAMP_DB);
    }
    Ok((20.0 * (max_value / mse.sqrt()).log10()).min(PSNR_CLAMP_DB))
}

/// Pixel replication of a `[C, H, W]` or `[B, C, H, W]` tensor.
pub fn nearest_upscale(image: &Tensor, s: usize) -> Result<Tensor> {
    let shape = image.shape();
    if shape.len() < 2 || s == 0 {
        return Err(Error::dim("nearest_upscale", shape, &[s]));
    }
    let nd = shape.len();
    let (h, w) = (shape[nd - 2], shape[nd - 1]);
    let planes = image.numel() / (h * w);
    let mut out_shape = shape.to_vec();
    out_shape[nd - 2] = h * s;
    out_shape[nd - 1] = w * s;
    let (oh, ow) = (h * s, w * s);
    let src = image.data();
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        for y in 0..oh {
            for x in 0..ow {
                out.push(src[p * h * w + (y / s) * w + x / s]);
            }
        }
    }
    Tensor::new(out_shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_examples() {
        let a = Tensor::full(&[3, 4, 4], 0.5);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), 100.0);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        let c = Tensor::zeros(&[1, 2]);
        assert!(psnr(&a, &c, 1.0).is_err());
    }

    #[test]
    fn mse_point_zero_one() {
        // MSE = 0.01 from alternating +-0.1 errors.
        let a = Tensor::zeros(&[1, 2, 2]);
        let b = Tensor::new(vec![1, 2, 2], vec![0.1, -0.1, 0.1, -0.1]).unwrap();
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn replication() {
        let x = Tensor::new(vec![1, 1, 2], vec![1.0, 2.0]).unwrap();
        let y = nearest_upscale(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 4]);
        assert_eq!(y.data(), &[1., 1., 2., 2., 1., 1., 2., 2.]);
    }
}
