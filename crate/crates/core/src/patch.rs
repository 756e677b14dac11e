//! Non-overlapping mini-patches.
//!
//! Patches are ordered batch-major, then row-major over the patch grid.
//! Inside a flattened patch the layout is channel, row, column. SR and HR
//! batches must go through the same ordering so that pair indices line up.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tape::Var;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchOrigin {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub patch: usize,
}

impl PatchOrigin {
    pub fn per_image(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    pub fn count(&self) -> usize {
        self.batch * self.per_image()
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.patch * self.patch
    }

    fn validate(&self) -> Result<()> {
        let PatchOrigin {
            height: h,
            width: w,
            patch: p,
            ..
        } = *self;
        if p == 0 || h % p != 0 || w % p != 0 {
            return Err(Error::Contract(format!(
                "patch size {p} must divide H={h} and W={w}"
            )));
        }
        Ok(())
    }

    /// Source index in `[B, C, H, W]` for every element of the
    /// `[B*N, C, P, P]` patch tensor.
    fn index(&self) -> Vec<Option<usize>> {
        let PatchOrigin {
            batch: b,
            channels: c,
            height: h,
            width: w,
            patch: p,
        } = *self;
        let gw = w / p;
        let per = self.per_image();
        let mut idx = Vec::with_capacity(b * c * h * w);
        for bi in 0..b {
            for n in 0..per {
                let (gy, gx) = (n / gw, n % gw);
                for ci in 0..c {
                    for py in 0..p {
                        let row = ((bi * c + ci) * h + gy * p + py) * w + gx * p;
                        idx.extend((0..p).map(|px| Some(row + px)));
                    }
                }
            }
        }
        idx
    }
}

/// A batch cut into mini-patches, with enough metadata to put it back.
#[derive(Clone, Copy, Debug)]
pub struct MiniPatchBatch<'t> {
    patches: Var<'t>,
    origin: PatchOrigin,
}

impl<'t> MiniPatchBatch<'t> {
    /// Wraps a `[B*N, C, P, P]` tensor, checking it against `origin`.
    pub fn from_parts(patches: Var<'t>, origin: PatchOrigin) -> Result<Self> {
        origin.validate()?;
        let want = [origin.count(), origin.channels, origin.patch, origin.patch];
        if patches.shape() != want {
            return Err(Error::Contract(format!(
                "patch tensor {:?} inconsistent with origin {origin:?}",
                patches.shape()
            )));
        }
        Ok(MiniPatchBatch { patches, origin })
    }

    pub fn patches(&self) -> Var<'t> {
        self.patches
    }

    pub fn origin(&self) -> PatchOrigin {
        self.origin
    }

    /// `[B*N, C*P*P]` view.
    pub fn flattened(&self) -> Result<Var<'t>> {
        self.patches
            .reshape(&[self.origin.count(), self.origin.patch_len()])
    }
}

pub fn patchify<'t>(batch: Var<'t>, p: usize) -> Result<MiniPatchBatch<'t>> {
    let shape = batch.shape();
    if shape.len() != 4 {
        return Err(Error::dim("patchify", &shape, &[0, 0, 0, 0]));
    }
    let origin = PatchOrigin {
        batch: shape[0],
        channels: shape[1],
        height: shape[2],
        width: shape[3],
        patch: p,
    };
    origin.validate()?;
    let patches = batch.gather(
        &[origin.count(), origin.channels, p, p],
        origin.index().into(),
    )?;
    Ok(MiniPatchBatch { patches, origin })
}

pub fn unpatchify<'t>(mp: &MiniPatchBatch<'t>) -> Result<Var<'t>> {
    let o = mp.origin;
    o.validate()?;
    let forward = o.index();
    let mut inverse = vec![None; forward.len()];
    for (dst, src) in forward.iter().enumerate() {
        if let Some(s) = src {
            inverse[*s] = Some(dst);
        }
    }
    let flat = mp.patches.reshape(&[forward.len()])?;
    flat.gather(&[o.batch, o.channels, o.height, o.width], Rc::from(inverse))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;
    use crate::tensor::Tensor;

    #[test]
    fn first_patch_layout() {
        let tape = Tape::new();
        let x = tape.var(Tensor::from_fn(&[1, 1, 4, 4], |i| i as f64));
        let mp = patchify(x, 2).unwrap();
        assert_eq!(mp.patches().shape(), vec![4, 1, 2, 2]);
        assert_eq!(&mp.patches().value().data()[..4], &[0., 1., 4., 5.]);
        assert_eq!(&mp.patches().value().data()[4..8], &[2., 3., 6., 7.]);
    }

    #[test]
    fn whole_image_and_unit_patches() {
        let tape = Tape::new();
        let x = tape.var(Tensor::from_fn(&[1, 2, 3, 3], |i| i as f64 * 0.5));
        let mp = patchify(x, 3).unwrap();
        assert_eq!(mp.patches().value().data(), x.value().data());

        let y = tape.var(Tensor::from_fn(&[1, 1, 2, 2], |i| 10.0 + i as f64));
        let mp = patchify(y, 1).unwrap();
        assert_eq!(mp.patches().shape(), vec![4, 1, 1, 1]);
        assert_eq!(mp.patches().value().data(), &[10., 11., 12., 13.]);
    }

    #[test]
    fn non_divisible_names_dims() {
        let tape = Tape::new();
        let x = tape.var(Tensor::zeros(&[1, 1, 6, 4]));
        let err = patchify(x, 4).unwrap_err().to_string();
        assert!(err.contains("H=6") && err.contains("W=4") && err.contains('4'));
    }

    #[test]
    fn swap_two_patches_swaps_blocks() {
        let tape = Tape::new();
        let x = tape.var(Tensor::from_fn(&[1, 1, 4, 4], |i| i as f64));
        let mp = patchify(x, 2).unwrap();
        let mut idx: Vec<Option<usize>> = (0..16).map(Some).collect();
        for k in 0..4 {
            idx.swap(k, 4 + k);
        }
        let swapped = mp.patches().gather(&[4, 1, 2, 2], idx.into()).unwrap();
        let back = unpatchify(&MiniPatchBatch::from_parts(swapped, mp.origin()).unwrap()).unwrap();
        let v = back.value();
        assert_eq!(&v.data()[0..4], &[2., 3., 0., 1.]);
        assert_eq!(&v.data()[4..8], &[6., 7., 4., 5.]);
        assert_eq!(&v.data()[8..16], &x.value().data()[8..16]);
    }

    #[test]
    fn inconsistent_origin() {
        let tape = Tape::new();
        let p = tape.var(Tensor::zeros(&[3, 1, 2, 2]));
        let o = PatchOrigin {
            batch: 1,
            channels: 1,
            height: 4,
            width: 4,
            patch: 2,
        };
        assert!(matches!(
            MiniPatchBatch::from_parts(p, o),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn unpatchify_gradient_is_ones() {
        let tape = Tape::new();
        let x = tape.var(Tensor::from_fn(&[2, 3, 4, 4], |i| (i as f64).cos()));
        let mp = patchify(x, 2).unwrap();
        let p = mp.patches();
        let back = unpatchify(&mp).unwrap();
        tape.backward(back.sum()).unwrap();
        assert_eq!(x.grad().unwrap(), Tensor::ones(&[2, 3, 4, 4]));
        assert!(p.requires_grad());
    }
}
