//! Two-layer convolutional upsampler with a pixel-shuffle output.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const HIDDEN: usize = 16;
pub const KERNEL: usize = 3;
const IN_CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyModelParams {
    pub scale: usize,
    pub conv1_weight: Tensor,
    pub conv1_bias: Tensor,
    pub conv2_weight: Tensor,
    pub conv2_bias: Tensor,
}

impl ToyModelParams {
    pub const NAMES: [&'static str; 4] =
        ["conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias"];

    pub fn zeros(scale: usize) -> Result<Self> {
        if scale == 0 {
            return Err(Error::Config("scale must be >= 1".into()));
        }
        let out = IN_CHANNELS * scale * scale;
        Ok(ToyModelParams {
            scale,
            conv1_weight: Tensor::zeros(&[HIDDEN, IN_CHANNELS, KERNEL, KERNEL]),
            conv1_bias: Tensor::zeros(&[HIDDEN]),
            conv2_weight: Tensor::zeros(&[out, HIDDEN, KERNEL, KERNEL]),
            conv2_bias: Tensor::zeros(&[out]),
        })
    }

    /// He-uniform first layer; a down-scaled output layer.
    pub fn init(scale: usize, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(scale)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in [&mut p.conv1_weight, &mut p.conv2_weight] {
            let fan_in = (w.shape()[1] * KERNEL * KERNEL) as f64;
            let bound = (6.0 / fan_in).sqrt();
            for v in w.data_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        }
        // Start the output layer small and centred on mid-grey, and keep
        // most first-layer units active on non-negative inputs.
        p.conv2_weight.data_mut().iter_mut().for_each(|w| *w *= 0.1);
        p.conv1_bias.data_mut().fill(0.1);
        p.conv2_bias.data_mut().fill(0.5);
        Ok(p)
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [
            &self.conv1_weight,
            &self.conv1_bias,
            &self.conv2_weight,
            &self.conv2_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [
            &mut self.conv1_weight,
            &mut self.conv1_bias,
            &mut self.conv2_weight,
            &mut self.conv2_bias,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Records the parameters on `tape`, as trainable leaves or constants.
    pub fn on_tape<'t>(&self, tape: &'t Tape, trainable: bool) -> ToyModelVars<'t> {
        let leaf = |t: &Tensor| {
            if trainable {
                tape.var(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        ToyModelVars {
            scale: self.scale,
            conv1_weight: leaf(&self.conv1_weight),
            conv1_bias: leaf(&self.conv1_bias),
            conv2_weight: leaf(&self.conv2_weight),
            conv2_bias: leaf(&self.conv2_bias),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ToyModelVars<'t> {
    pub scale: usize,
    pub conv1_weight: Var<'t>,
    pub conv1_bias: Var<'t>,
    pub conv2_weight: Var<'t>,
    pub conv2_bias: Var<'t>,
}

impl<'t> ToyModelVars<'t> {
    pub fn vars(&self) -> [Var<'t>; 4] {
        [
            self.conv1_weight,
            self.conv1_bias,
            self.conv2_weight,
            self.conv2_bias,
        ]
    }
}

/// im2col gather indices for a `k x k` window with zero padding `k / 2`.
fn im2col_index(b: usize, c: usize, h: usize, w: usize, k: usize) -> Vec<Option<usize>> {
    let pad = (k / 2) as i64;
    let mut idx = Vec::with_capacity(b * h * w * c * k * k);
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                for ci in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let sy = y as i64 + ky as i64 - pad;
                            let sx = x as i64 + kx as i64 - pad;
                            idx.push(
                                (sy >= 0 && sx >= 0 && sy < h as i64 && sx < w as i64)
                                    .then(|| ((bi * c + ci) * h + sy as usize) * w + sx as usize),
                            );
                        }
                    }
                }
            }
        }
    }
    idx
}

/// Same-size convolution, `[B, Cin, H, W]` with `[Cout, Cin, k, k]` weights.
pub fn conv2d<'t>(x: Var<'t>, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
    let (xs, ws) = (x.shape(), weight.shape());
    if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || ws[2] != ws[3] || ws[2] % 2 == 0 {
        return Err(Error::dim("conv2d", &xs, &ws));
    }
    if bias.shape() != [ws[0]] {
        return Err(Error::dim("conv2d bias", &bias.shape(), &[ws[0]]));
    }
    let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, k) = (ws[0], ws[2]);
    let cols = x.gather(&[b * h * w, c * k * k], im2col_index(b, c, h, w, k).into())?;
    let kernel = weight.reshape(&[cout, c * k * k])?.transpose()?;
    let out = cols
        .matmul(kernel)?
        .add(bias.broadcast_to(&[b * h * w, cout])?)?;
    out.reshape(&[b, h, w, cout])?.permute(&[0, 3, 1, 2])
}

/// `[B, C*s*s, h, w]` to `[B, C, h*s, w*s]`; channel `c*s*s + dy*s + dx`
/// lands at offset `(dy, dx)` of each `s x s` block.
pub fn pixel_shuffle<'t>(x: Var<'t>, s: usize) -> Result<Var<'t>> {
    let xs = x.shape();
    if xs.len() != 4 || s == 0 || !xs[1].is_multiple_of(s * s) {
        return Err(Error::dim("pixel_shuffle", &xs, &[s]));
    }
    let (b, cs, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let c = cs / (s * s);
    let (oh, ow) = (h * s, w * s);
    let mut idx = Vec::with_capacity(b * c * oh * ow);
    for bi in 0..b {
        for ci in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let ch = ci * s * s + (y % s) * s + xx % s;
                    idx.push(Some(((bi * cs + ch) * h + y / s) * w + xx / s));
                }
            }
        }
    }
    x.gather(&[b, c, oh, ow], Rc::from(idx))
}

pub fn toy_forward<'t>(params: &ToyModelVars<'t>, lr: Var<'t>) -> Result<Var<'t>> {
    let xs = lr.shape();
    if xs.len() != 4 || xs[1] != IN_CHANNELS {
        return Err(Error::dim("toy_forward", &xs, &[0, IN_CHANNELS, 0, 0]));
    }
    let hidden = conv2d(lr, params.conv1_weight, params.conv1_bias)?.relu();
    let out = conv2d(hidden, params.conv2_weight, params.conv2_bias)?;
    pixel_shuffle(out, params.scale)
}

/// Runs the model outside of training.
pub fn upscale(params: &ToyModelParams, lr: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let vars = params.on_tape(&tape, false);
    let input = match lr.shape().len() {
        3 => lr.reshape(&[1, lr.shape()[0], lr.shape()[1], lr.shape()[2]])?,
        _ => lr.clone(),
    };
    let out = toy_forward(&vars, tape.constant(input))?;
    let v = out.value();
    if lr.shape().len() == 3 {
        v.reshape(&v.shape()[1..])
    } else {
        Ok((*v).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_budget() {
        let p = ToyModelParams::init(4, 1).unwrap();
        assert_eq!(p.param_count(), 448 + 6960);
        assert!(p.param_count() < 10_000);
        assert!(p.is_finite());
    }

    #[test]
    fn zero_params_give_bias_output() {
        let mut p = ToyModelParams::zeros(2).unwrap();
        let tape = Tape::new();
        let lr = tape.constant(Tensor::from_fn(&[1, 3, 3, 3], |i| i as f64));
        let out = toy_forward(&p.on_tape(&tape, false), lr).unwrap();
        assert_eq!(out.shape(), vec![1, 3, 6, 6]);
        assert!(out.value().data().iter().all(|&v| v == 0.0));

        for (i, v) in p.conv2_bias.data_mut().iter_mut().enumerate() {
            *v = i as f64;
        }
        let out = upscale(&p, &Tensor::zeros(&[3, 2, 2])).unwrap();
        // channel 1, block offset (1, 0) -> bias index 1*4 + 2
        assert_eq!(out.data()[16 + 4], 6.0);
    }

    #[test]
    fn pixel_shuffle_tiles_channels() {
        let tape = Tape::new();
        let s = 2;
        let x = tape.constant(Tensor::from_fn(&[1, 4, 2, 3], |i| (i / 6) as f64 + 1.0));
        let y = pixel_shuffle(x, s).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 4, 6]);
        let v = y.value();
        for yy in 0..4 {
            for xx in 0..6 {
                let g = (yy % 2) * 2 + xx % 2;
                assert_eq!(v.data()[yy * 6 + xx], g as f64 + 1.0);
            }
        }
        assert!(pixel_shuffle(tape.constant(Tensor::zeros(&[1, 3, 2, 2])), 2).is_err());
    }

    #[test]
    fn conv_matches_direct_sum() {
        let tape = Tape::new();
        let x = Tensor::from_fn(&[2, 2, 4, 5], |i| ((i * 31) % 17) as f64 / 17.0);
        let w = Tensor::from_fn(&[3, 2, 3, 3], |i| ((i * 13) % 11) as f64 / 11.0 - 0.5);
        let b = Tensor::new(vec![3], vec![0.1, -0.2, 0.3]).unwrap();
        let out = conv2d(
            tape.constant(x.clone()),
            tape.constant(w.clone()),
            tape.constant(b.clone()),
        )
        .unwrap();
        let v = out.value();
        for bi in 0..2 {
            for co in 0..3 {
                for y in 0..4 {
                    for xx in 0..5 {
                        let mut acc = b.data()[co];
                        for ci in 0..2 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let (sy, sx) =
                                        (y as i64 + ky as i64 - 1, xx as i64 + kx as i64 - 1);
                                    if sy < 0 || sx < 0 || sy >= 4 || sx >= 5 {
                                        continue;
                                    }
                                    acc += w.data()[((co * 2 + ci) * 3 + ky) * 3 + kx]
                                        * x.data()
                                            [((bi * 2 + ci) * 4 + sy as usize) * 5 + sx as usize];
                                }
                            }
                        }
                        let got = v.data()[((bi * 3 + co) * 4 + y) * 5 + xx];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn channel_mismatch() {
        let p = ToyModelParams::init(2, 0).unwrap();
        let tape = Tape::new();
        let lr = tape.constant(Tensor::zeros(&[1, 1, 4, 4]));
        assert!(matches!(
            toy_forward(&p.on_tape(&tape, false), lr),
            Err(Error::Dimension { .. })
        ));
    }
}
