//! High-frequency enhancement in the Fourier domain.
//!
//! Transforms are explicit products with dense DFT matrices, so the whole
//! enhancement is a fixed linear map recorded on the tape. The spectrum is
//! kept in natural (unshifted) index order: index 0 holds DC and the middle
//! index the highest frequency, which is exactly where the inverse Gaussian
//! kernel peaks.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Forward DFT matrix `F_jk = exp(-2 pi i jk / n)` split into real and
/// imaginary parts. The inverse uses the complex conjugate.
#[derive(Debug)]
pub struct FourierPlan {
    n: usize,
    re: Tensor,
    im: Tensor,
}

impl FourierPlan {
    fn build(n: usize) -> Self {
        let mut re = Tensor::zeros(&[n, n]);
        let mut im = Tensor::zeros(&[n, n]);
        for j in 0..n {
            for k in 0..n {
                // Reduce jk mod n first so large products keep full precision.
                let theta = -2.0 * PI * ((j * k) % n) as f64 / n as f64;
                re.data_mut()[j * n + k] = theta.cos();
                im.data_mut()[j * n + k] = theta.sin();
            }
        }
        FourierPlan { n, re, im }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn forward_re(&self) -> &Tensor {
        &self.re
    }

    pub fn forward_im(&self) -> &Tensor {
        &self.im
    }

    pub fn inverse_re(&self) -> &Tensor {
        &self.re
    }

    pub fn inverse_im(&self) -> Tensor {
        self.im.scale(-1.0)
    }

    /// `(real(F) - imag(F))^T`, the real-valued inverse used by
    /// [`InverseMode::PaperLiteral`].
    pub fn literal_inverse(&self) -> Tensor {
        // F is symmetric, so the transpose is a no-op.
        self.re.zip_map(&self.im, |r, i| r - i).expect("same shape")
    }
}

/// DFT matrices for size `n`, built once per size and shared afterwards.
pub fn dft_matrix(n: usize) -> Result<Arc<FourierPlan>> {
    if n == 0 {
        return Err(Error::Contract("DFT size must be at least 1".into()));
    }
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<FourierPlan>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let mut map = cache.lock().unwrap_or_else(|e| e.into_inner());
    Ok(Arc::clone(
        map.entry(n)
            .or_insert_with(|| Arc::new(FourierPlan::build(n))),
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    pub re: Tensor,
    pub im: Tensor,
}

impl ComplexMatrix {
    pub fn from_real(re: Tensor) -> Self {
        let im = Tensor::zeros(re.shape());
        ComplexMatrix { re, im }
    }

    fn dims(&self) -> Result<(usize, usize)> {
        if self.re.ndim() != 2 || self.re.shape() != self.im.shape() {
            return Err(Error::dim("transform2d", self.re.shape(), self.im.shape()));
        }
        Ok((self.re.shape()[0], self.re.shape()[1]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

fn cmul((ar, ai): (&Tensor, &Tensor), (br, bi): (&Tensor, &Tensor)) -> Result<(Tensor, Tensor)> {
    let rr = ar.matmul(br)?;
    let ii = ai.matmul(bi)?;
    let ri = ar.matmul(bi)?;
    let ir = ai.matmul(br)?;
    Ok((
        rr.zip_map(&ii, |a, b| a - b)?,
        ri.zip_map(&ir, |a, b| a + b)?,
    ))
}

/// Two-dimensional DFT of an `H x W` complex matrix: `F_H Y F_W` forward,
/// `(1/HW) conj(F_H) Y conj(F_W)` inverse.
pub fn transform2d(y: &ComplexMatrix, direction: Direction) -> Result<ComplexMatrix> {
    let (h, w) = y.dims()?;
    if !y.re.is_finite() || !y.im.is_finite() {
        return Err(Error::domain("transform2d", "non-finite input"));
    }
    let (ph, pw) = (dft_matrix(h)?, dft_matrix(w)?);
    let (hre, him, wre, wim) = match direction {
        Direction::Forward => (
            ph.forward_re().clone(),
            ph.forward_im().clone(),
            pw.forward_re().clone(),
            pw.forward_im().clone(),
        ),
        Direction::Inverse => (
            ph.inverse_re().clone(),
            ph.inverse_im(),
            pw.inverse_re().clone(),
            pw.inverse_im(),
        ),
    };
    let (lr, li) = cmul((&hre, &him), (&y.re, &y.im))?;
    let (re, im) = cmul((&lr, &li), (&wre, &wim))?;
    Ok(match direction {
        Direction::Forward => ComplexMatrix { re, im },
        Direction::Inverse => {
            let s = 1.0 / (h * w) as f64;
            ComplexMatrix {
                re: re.scale(s),
                im: im.scale(s),
            }
        }
    })
}

pub fn forward_real(y: &Tensor) -> Result<ComplexMatrix> {
    transform2d(&ComplexMatrix::from_real(y.clone()), Direction::Forward)
}

/// Inverse transform keeping only the real component.
pub fn inverse_real(z: &ComplexMatrix) -> Result<Tensor> {
    Ok(transform2d(z, Direction::Inverse)?.re)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InverseMode {
    /// Conjugate complex inverse with real-part extraction.
    #[default]
    Exact,
    /// Real matrix `(real(F) - imag(F))^T` applied to the real spectrum.
    PaperLiteral,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnhanceConfig {
    /// Kernel amplitude.
    pub alpha: f64,
    /// Kernel width in index units; `None` means `n / 4` for each axis.
    pub mu: Option<f64>,
    pub inverse: InverseMode,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        EnhanceConfig {
            alpha: 1.0,
            mu: None,
            inverse: InverseMode::Exact,
        }
    }
}

impl EnhanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        if let Some(mu) = self.mu {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(Error::Config(format!("mu must be > 0, got {mu}")));
            }
        }
        Ok(())
    }

    pub fn mu_for(&self, n: usize) -> f64 {
        self.mu.unwrap_or(n as f64 / 4.0)
    }
}

/// `K_i = alpha * exp(-(i - (n-1)/2)^2 / (2 mu^2))`.
pub fn gaussian_kernel(n: usize, cfg: &EnhanceConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Contract("kernel length must be at least 1".into()));
    }
    let mu = cfg.mu_for(n);
    let center = (n as f64 - 1.0) / 2.0;
    Ok((0..n)
        .map(|i| {
            let d = i as f64 - center;
            cfg.alpha * (-(d * d) / (2.0 * mu * mu)).exp()
        })
        .collect())
}

/// Per-frequency gain `K_u^(H) K_v^(W)` as an `H x W` matrix.
pub fn spectral_weight(h: usize, w: usize, cfg: &EnhanceConfig) -> Result<Tensor> {
    let kh = gaussian_kernel(h, cfg)?;
    let kw = gaussian_kernel(w, cfg)?;
    Ok(Tensor::from_fn(&[h, w], |i| kh[i / w] * kw[i % w]))
}

/// Applies `M` to the right of every `rows x cols` block stored as a
/// `[blocks * rows, cols]` matrix.
fn right<'t>(x: Var<'t>, m: &Tensor) -> Result<Var<'t>> {
    x.matmul(x.tape().constant(m.clone()))
}

/// `[n*a, b]` -> `[n*b, a]`, transposing each block.
fn flip<'t>(x: Var<'t>, n: usize, a: usize, b: usize) -> Result<Var<'t>> {
    x.reshape(&[n, a, b])?.transpose()?.reshape(&[n * b, a])
}

/// Enhances a `[B, C, H, W]` batch channel by channel.
///
/// Each channel is mapped to the spectrum, scaled by [`spectral_weight`]
/// and mapped back. Linear in the input, so the adjoint recorded on the
/// tape is the same map transposed.
pub fn enhance<'t>(y: Var<'t>, cfg: &EnhanceConfig) -> Result<Var<'t>> {
    cfg.validate()?;
    let shape = y.shape();
    if shape.len() != 4 {
        return Err(Error::dim("enhance", &shape, &[0, 0, 0, 0]));
    }
    let (h, w) = (shape[2], shape[3]);
    let n = shape[0] * shape[1];
    let (ph, pw) = (dft_matrix(h)?, dft_matrix(w)?);

    let x = y.reshape(&[n * h, w])?;
    let xr = right(x, pw.forward_re())?;
    let xi = right(x, pw.forward_im())?;
    // Work on transposed blocks so the left product becomes a right product;
    // the DFT matrices are symmetric.
    let tr = flip(xr, n, h, w)?;
    let ti = flip(xi, n, h, w)?;
    let zr = right(tr, ph.forward_re())?.sub(right(ti, ph.forward_im())?)?;
    let zi = right(ti, ph.forward_re())?.add(right(tr, ph.forward_im())?)?;

    let weight = spectral_weight(h, w, cfg)?;
    let wt = Tensor::from_fn(&[n * w, h], |idx| {
        let (v, u) = ((idx / h) % w, idx % h);
        weight.data()[u * w + v]
    });
    let wt = y.tape().constant(wt);
    let zr = zr.mul(wt)?;
    let zi = zi.mul(wt)?;

    let scale = 1.0 / (h * w) as f64;
    let out = match cfg.inverse {
        InverseMode::Exact => {
            let ar = right(zr, ph.forward_re())?.add(right(zi, ph.forward_im())?)?;
            let ai = right(zi, ph.forward_re())?.sub(right(zr, ph.forward_im())?)?;
            let ar = flip(ar, n, w, h)?;
            let ai = flip(ai, n, w, h)?;
            right(ar, pw.forward_re())?.add(right(ai, pw.forward_im())?)?
        }
        InverseMode::PaperLiteral => {
            let a = right(zr, &ph.literal_inverse())?;
            right(flip(a, n, w, h)?, &pw.literal_inverse())?
        }
    };
    out.scale(scale).reshape(&shape)
}

/// Untaped enhancement of `[H, W]`, `[C, H, W]` or `[B, C, H, W]` data.
pub fn enhance_tensor(y: &Tensor, cfg: &EnhanceConfig) -> Result<Tensor> {
    let shape = y.shape().to_vec();
    let as4: Vec<usize> = match shape.len() {
        2 => vec![1, 1, shape[0], shape[1]],
        3 => vec![1, shape[0], shape[1], shape[2]],
        4 => shape.clone(),
        _ => return Err(Error::dim("enhance", &shape, &[0, 0, 0, 0])),
    };
    let tape = Tape::new();
    let out = enhance(tape.constant(y.reshape(&as4)?), cfg)?;
    let t = out.value().reshape(&shape)?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_plans() {
        let p1 = dft_matrix(1).unwrap();
        assert_eq!(p1.forward_re().data(), &[1.0]);
        assert_eq!(p1.forward_im().data(), &[0.0]);

        let p2 = dft_matrix(2).unwrap();
        let want = [1.0, 1.0, 1.0, -1.0];
        for (a, b) in p2.forward_re().data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(p2.forward_im().data().iter().all(|v| v.abs() < 1e-15));

        let p4 = dft_matrix(4).unwrap();
        assert!(p4.forward_re().data()[5].abs() < 1e-15);
        assert!((p4.forward_im().data()[5] + 1.0).abs() < 1e-15);
        assert!(dft_matrix(0).is_err());
    }

    #[test]
    fn plan_is_symmetric_and_invertible() {
        let n = 7;
        let p = dft_matrix(n).unwrap();
        assert_eq!(p.forward_re().transpose2d().unwrap(), *p.forward_re());
        assert_eq!(p.forward_im().transpose2d().unwrap(), *p.forward_im());
        let (r, i) = cmul(
            (p.inverse_re(), &p.inverse_im()),
            (p.forward_re(), p.forward_im()),
        )
        .unwrap();
        let id = Tensor::eye(n);
        assert!(r.scale(1.0 / n as f64).max_abs_diff(&id).unwrap() < 1e-12);
        assert!(i.data().iter().all(|v| (v / n as f64).abs() < 1e-12));
    }

    #[test]
    fn plans_are_cached() {
        let a = dft_matrix(11).unwrap();
        let b = dft_matrix(11).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
    }

    #[test]
    fn constant_has_dc_only_spectrum() {
        let c = 0.37;
        let z = forward_real(&Tensor::full(&[4, 4], c)).unwrap();
        assert!((z.re.data()[0] - 16.0 * c).abs() < 1e-12);
        for k in 1..16 {
            assert!(z.re.data()[k].abs() < 1e-12 && z.im.data()[k].abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_values() {
        let cfg = EnhanceConfig {
            alpha: 1.0,
            mu: Some(1.0),
            ..Default::default()
        };
        let k = gaussian_kernel(5, &cfg).unwrap();
        assert_eq!(k[2], 1.0);
        assert!((k[0] - (-2.0f64).exp()).abs() < 1e-15);
        assert_eq!(k[0], k[4]);
        assert!(gaussian_kernel(0, &cfg).is_err());
        let bad = EnhanceConfig { alpha: 0.0, ..cfg };
        assert!(matches!(gaussian_kernel(3, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn constant_image_scaled_by_corner_gain() {
        let cfg = EnhanceConfig {
            alpha: 1.0,
            mu: Some(1.0),
            ..Default::default()
        };
        let c = 0.8;
        let out = enhance_tensor(&Tensor::full(&[1, 1, 4, 4], c), &cfg).unwrap();
        let want = c * (-2.25f64).exp();
        assert!((want / c - 0.105399).abs() < 1e-6);
        for v in out.data() {
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut t = Tensor::zeros(&[2, 2]);
        t.data_mut()[1] = f64::NAN;
        assert!(matches!(forward_real(&t), Err(Error::Domain { .. })));
    }
}
