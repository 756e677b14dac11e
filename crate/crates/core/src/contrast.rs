//! Spatial contrastive loss over mini-patches and the total training loss.
//!
//! Pairs `(i, j)` of mini-patches are labelled positive or negative from
//! the HR batch alone: the PSNR-style distance between HR patches `i` and
//! `j` is compared to a threshold. SR patches are then pulled towards the
//! SR and HR patches of their positives and pushed from their negatives
//! through cosine similarities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{enhance, EnhanceConfig};
use crate::patch::patchify;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TempMode {
    /// `exp(S / t)`.
    #[default]
    InsideExp,
    /// `(exp(S_ss) + 2 exp(S_sh)) / t`; the temperature only shifts the
    /// loss by a constant.
    PaperLiteral,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastConfig {
    pub patch_size: usize,
    /// Mask threshold in dB between enhanced HR patches. The default keeps
    /// positives to the near-identical pairs (about 1% off-diagonal on
    /// natural-looking crops); enhancement shrinks patch distances, so a
    /// threshold calibrated on raw pixels labels most pairs positive.
    pub eta: f64,
    pub t_pos: f64,
    pub t_neg: f64,
    pub temp_mode: TempMode,
    /// Upper bound of the colour space.
    pub max_value: f64,
    /// Mask value used for identical HR patches.
    pub mask_clamp: f64,
    pub cos_epsilon: f64,
    /// Include `j = i` in the positive and negative sums.
    pub self_pairs: bool,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        ContrastConfig {
            patch_size: 8,
            eta: 17.0,
            t_pos: 0.5,
            t_neg: 1.5,
            temp_mode: TempMode::InsideExp,
            max_value: 1.0,
            mask_clamp: 100.0,
            cos_epsilon: 1e-12,
            self_pairs: true,
        }
    }
}

impl ContrastConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 {
            return bad("patch_size must be >= 1".into());
        }
        if !(self.t_pos > 0.0 && self.t_neg > 0.0) {
            return bad(format!(
                "temperatures must be > 0, got ({}, {})",
                self.t_pos, self.t_neg
            ));
        }
        if !(self.max_value > 0.0) {
            return bad(format!("max_value must be > 0, got {}", self.max_value));
        }
        if !(self.mask_clamp > self.eta) {
            return bad(format!(
                "mask_clamp {} must exceed eta {}",
                self.mask_clamp, self.eta
            ));
        }
        if !(self.cos_epsilon > 0.0) {
            return bad(format!("cos_epsilon must be > 0, got {}", self.cos_epsilon));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub l1_reduction: Reduction,
}

impl Default for LossWeights {
    /// Published L1 and contrastive weights with the perceptual term off.
    fn default() -> Self {
        LossWeights {
            w1: 1e-2,
            w2: 0.0,
            w3: 3e-5,
            l1_reduction: Reduction::Sum,
        }
    }
}

impl LossWeights {
    /// All three published weights, perceptual term included.
    pub fn reference() -> Self {
        LossWeights {
            w2: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w1", self.w1), ("w2", self.w2), ("w3", self.w3)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be finite and >= 0, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Feature-space distance between SR and HR batches, e.g. a pretrained
/// network's activations.
pub trait PerceptualDistance {
    fn distance<'t>(&self, sr: Var<'t>, hr: Var<'t>) -> Result<Var<'t>>;
}

fn check_rows(a: &[usize], b: &[usize], op: &'static str) -> Result<()> {
    if a.len() != 2 || b.len() != 2 || a[1] != b[1] {
        return Err(Error::dim(op, a, b));
    }
    Ok(())
}

fn unit_rows<'t>(a: Var<'t>, eps: f64) -> Result<Var<'t>> {
    let shape = a.shape();
    let norm = a.mul(a)?.sum_axes(&[1])?.sqrt()?.clamp_min(eps);
    a.div(norm.reshape(&[shape[0], 1])?.broadcast_to(&shape)?)
}

/// `S_ij = <a_i, b_j> / (max(|a_i|, eps) max(|b_j|, eps))`.
pub fn cosine_similarity_matrix<'t>(a: Var<'t>, b: Var<'t>, eps: f64) -> Result<Var<'t>> {
    check_rows(&a.shape(), &b.shape(), "cosine_similarity_matrix")?;
    if !(eps > 0.0) {
        return Err(Error::Config(format!("cos_epsilon must be > 0, got {eps}")));
    }
    let an = unit_rows(a, eps)?;
    let bn = unit_rows(b, eps)?;
    an.matmul(bn.transpose()?)
}

/// `M_ij = -20 log10(|y_i - y_j|_2 / MAX)` over flattened HR patches, with
/// identical patches set to `mask_clamp`. Carries no gradient.
pub fn psnr_mask(hr: &Tensor, cfg: &ContrastConfig) -> Result<Tensor> {
    if hr.ndim() != 2 {
        return Err(Error::dim("psnr_mask", hr.shape(), &[0, 0]));
    }
    if !(cfg.max_value > 0.0) {
        return Err(Error::Config(format!(
            "max_value must be > 0, got {}",
            cfg.max_value
        )));
    }
    let (n, d) = (hr.shape()[0], hr.shape()[1]);
    let rows = hr.data();
    let mut m = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i..n {
            let dist = rows[i * d..(i + 1) * d]
                .iter()
                .zip(&rows[j * d..(j + 1) * d])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let v = if dist == 0.0 {
                cfg.mask_clamp
            } else {
                -20.0 * (dist / cfg.max_value).log10()
            };
            m.data_mut()[i * n + j] = v;
            m.data_mut()[j * n + i] = v;
        }
    }
    Ok(m)
}

/// Diagnostic snapshot of the quantities behind one loss evaluation.
#[derive(Clone, Debug)]
pub struct SimilarityBundle {
    pub s_sr_hr: Tensor,
    pub s_sr_sr: Tensor,
    pub mask: Tensor,
    /// Row-major `B* x B*`, `mask >= eta`.
    pub pos_indicator: Vec<bool>,
}

impl SimilarityBundle {
    pub fn positives_in_row(&self, i: usize) -> usize {
        let n = self.mask.shape()[0];
        self.pos_indicator[i * n..(i + 1) * n]
            .iter()
            .filter(|&&p| p)
            .count()
    }
}

pub fn similarity_bundle(
    sr: &Tensor,
    hr: &Tensor,
    cfg: &ContrastConfig,
) -> Result<SimilarityBundle> {
    cfg.validate()?;
    let tape = Tape::new();
    let (s, h) = (tape.constant(sr.clone()), tape.constant(hr.clone()));
    let s_sr_hr = (*cosine_similarity_matrix(s, h, cfg.cos_epsilon)?.value()).clone();
    let s_sr_sr = (*cosine_similarity_matrix(s, s, cfg.cos_epsilon)?.value()).clone();
    let mask = psnr_mask(hr, cfg)?;
    let pos_indicator = mask.data().iter().map(|&m| m >= cfg.eta).collect();
    Ok(SimilarityBundle {
        s_sr_hr,
        s_sr_sr,
        mask,
        pos_indicator,
    })
}

/// Positive and negative selector matrices, checked so that every row has
/// at least one of each.
fn partition(mask: &Tensor, cfg: &ContrastConfig) -> Result<(Tensor, Tensor)> {
    let n = mask.shape()[0];
    let mut pos = Tensor::zeros(&[n, n]);
    let mut neg = Tensor::zeros(&[n, n]);
    for i in 0..n {
        let (mut np, mut nn) = (0, 0);
        for j in 0..n {
            if i == j && !cfg.self_pairs {
                continue;
            }
            if mask.data()[i * n + j] >= cfg.eta {
                pos.data_mut()[i * n + j] = 1.0;
                np += 1;
            } else {
                neg.data_mut()[i * n + j] = 1.0;
                nn += 1;
            }
        }
        if np == 0 {
            return Err(Error::DegeneratePartition {
                row: i,
                missing: "positive",
            });
        }
        if nn == 0 {
            return Err(Error::DegeneratePartition {
                row: i,
                missing: "negative",
            });
        }
    }
    Ok((pos, neg))
}

/// Contrastive loss between flattened SR and HR mini-patches `[B*, D]`.
pub fn spatial_contrastive_loss<'t>(
    sr: Var<'t>,
    hr: Var<'t>,
    cfg: &ContrastConfig,
) -> Result<Var<'t>> {
    cfg.validate()?;
    let (ss, hs) = (sr.shape(), hr.shape());
    check_rows(&ss, &hs, "spatial_contrastive_loss")?;
    if ss[0] != hs[0] {
        return Err(Error::dim("spatial_contrastive_loss", &ss, &hs));
    }
    let tape = sr.tape();
    let mask = psnr_mask(&hr.value(), cfg)?;
    let (pos, neg) = partition(&mask, cfg)?;
    let (pos, neg) = (tape.constant(pos), tape.constant(neg));

    let s_ss = cosine_similarity_matrix(sr, sr, cfg.cos_epsilon)?;
    let s_sh = cosine_similarity_matrix(sr, hr, cfg.cos_epsilon)?;
    let scores = |t: f64| -> Result<Var<'t>> {
        s_ss.scale(1.0 / t)
            .exp()
            .add(s_sh.scale(1.0 / t).exp().scale(2.0))
    };

    let (e_pos, e_neg) = match cfg.temp_mode {
        TempMode::InsideExp => (scores(cfg.t_pos)?, scores(cfg.t_neg)?),
        TempMode::PaperLiteral => {
            let e = scores(1.0)?;
            (e, e)
        }
    };
    let q_pos = e_pos.mul(pos)?.sum_axes(&[1])?;
    let q_neg = e_neg.mul(neg)?.sum_axes(&[1])?;
    let loss = q_pos.log()?.sub(q_neg.log()?)?.mean().scale(-1.0);
    Ok(match cfg.temp_mode {
        TempMode::InsideExp => loss,
        // log((A / t_pos) / (B / t_neg)) = log(A / B) + log(t_neg / t_pos);
        // kept as a separate constant so the gradient path is untouched.
        TempMode::PaperLiteral => loss.offset(-(cfg.t_neg / cfg.t_pos).ln()),
    })
}

/// Enhance both batches, cut into mini-patches and contrast them. The HR
/// side is detached.
pub fn decloss<'t>(
    sr: Var<'t>,
    hr: Var<'t>,
    ecfg: &EnhanceConfig,
    ccfg: &ContrastConfig,
) -> Result<Var<'t>> {
    if sr.shape() != hr.shape() {
        return Err(Error::dim("decloss", &sr.shape(), &hr.shape()));
    }
    ccfg.validate()?;
    let hr = hr.detach();
    let sr_p = patchify(enhance(sr, ecfg)?, ccfg.patch_size)?.flattened()?;
    let hr_p = patchify(enhance(hr, ecfg)?, ccfg.patch_size)?.flattened()?;
    spatial_contrastive_loss(sr_p, hr_p, ccfg)
}

pub fn l1_loss<'t>(sr: Var<'t>, hr: Var<'t>, reduction: Reduction) -> Result<Var<'t>> {
    let diff = sr.sub(hr)?.abs();
    Ok(match reduction {
        Reduction::Sum => diff.sum(),
        Reduction::Mean => diff.mean(),
    })
}

/// Individual terms of the weighted loss. Terms with zero weight are not
/// evaluated, except L1 which is always reported.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms<'t> {
    pub l1: Var<'t>,
    pub perceptual: Option<Var<'t>>,
    pub contrastive: Option<Var<'t>>,
    pub total: Var<'t>,
}

pub fn total_loss<'t>(
    sr: Var<'t>,
    hr: Var<'t>,
    w: &LossWeights,
    ecfg: &EnhanceConfig,
    ccfg: &ContrastConfig,
    perceptual: Option<&dyn PerceptualDistance>,
) -> Result<LossTerms<'t>> {
    w.validate()?;
    if w.w2 > 0.0 && perceptual.is_none() {
        return Err(Error::Config(
            "w2 > 0 requires a perceptual distance hook".into(),
        ));
    }
    let l1 = l1_loss(sr, hr, w.l1_reduction)?;
    let lp = match perceptual {
        Some(hook) if w.w2 > 0.0 => Some(hook.distance(sr, hr.detach())?),
        _ => None,
    };
    let ld = if w.w3 > 0.0 {
        Some(decloss(sr, hr, ecfg, ccfg)?)
    } else {
        None
    };

    let mut total: Option<Var<'t>> = None;
    for (weight, term) in [(w.w1, Some(l1)), (w.w2, lp), (w.w3, ld)] {
        let Some(term) = term else { continue };
        if weight == 0.0 {
            continue;
        }
        let scaled = term.scale(weight);
        total = Some(match total {
            Some(acc) => acc.add(scaled)?,
            None => scaled,
        });
    }
    Ok(LossTerms {
        l1,
        perceptual: lp,
        contrastive: ld,
        total: total.unwrap_or_else(|| l1.scale(0.0)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let tape = Tape::new();
        let a = tape.var(t(&[3, 2], &[1., 0., 0., 1., 0., 0.]));
        let s = cosine_similarity_matrix(a, a, 1e-12).unwrap();
        let v = s.value();
        assert_eq!(v.data()[0], 1.0);
        assert_eq!(v.data()[4], 1.0);
        assert_eq!(v.data()[1], 0.0);
        // zero row
        assert!(v.data()[6..9].iter().all(|&x| x == 0.0));
        assert_eq!(v.data()[8], 0.0);
        tape.backward(s.sum()).unwrap();
        assert!(a.grad().unwrap().is_finite());
    }

    #[test]
    fn mask_examples() {
        let cfg = ContrastConfig::default();
        let hr = t(&[2, 4], &[0.2, 0.2, 0.2, 0.2, 0.7, 0.2, 0.2, 0.2]);
        let m = psnr_mask(&hr, &cfg).unwrap();
        assert_eq!(m.data()[0], 100.0);
        assert!((m.data()[1] - 6.020599913279624).abs() < 1e-12);
        assert_eq!(m.data()[1], m.data()[2]);

        let hr = t(&[2, 4], &[0., 0., 0., 0., 1., 1., 1., 1.]);
        let m = psnr_mask(&hr, &cfg).unwrap();
        assert!((m.data()[1] + 6.020599913279624).abs() < 1e-12);
    }

    fn orthonormal_case(mode: TempMode) -> f64 {
        let tape = Tape::new();
        let e = t(&[2, 2], &[1., 0., 0., 1.]);
        let sr = tape.var(e.clone());
        let hr = tape.constant(e);
        let cfg = ContrastConfig {
            temp_mode: mode,
            ..Default::default()
        };
        spatial_contrastive_loss(sr, hr, &cfg)
            .unwrap()
            .item()
            .unwrap()
    }

    #[test]
    fn closed_form_values() {
        assert!((orthonormal_case(TempMode::InsideExp) + 2.0).abs() < 1e-12);
        let lit = orthonormal_case(TempMode::PaperLiteral);
        assert!((lit + 1.0 + 3f64.ln()).abs() < 1e-12);
        assert!((lit + 2.098_612_288_668_11).abs() < 1e-12);
    }

    #[test]
    fn degenerate_rows() {
        let tape = Tape::new();
        let x = tape.var(t(&[2, 2], &[0.5, 0.5, 0.5, 0.5]));
        let err = spatial_contrastive_loss(x, x, &ContrastConfig::default()).unwrap_err();
        assert_eq!(
            err,
            Error::DegeneratePartition {
                row: 0,
                missing: "negative"
            }
        );
        let cfg = ContrastConfig {
            self_pairs: false,
            ..Default::default()
        };
        let e = tape.var(t(&[2, 2], &[1., 0., 0., 1.]));
        assert!(matches!(
            spatial_contrastive_loss(e, e, &cfg),
            Err(Error::DegeneratePartition {
                missing: "positive",
                ..
            })
        ));
    }

    #[test]
    fn l1_examples() {
        let tape = Tape::new();
        let hr = tape.constant(Tensor::full(&[1, 2, 2], 0.25));
        let sr = tape.var(Tensor::full(&[1, 2, 2], 0.75));
        assert_eq!(
            l1_loss(hr, hr, Reduction::Sum).unwrap().item().unwrap(),
            0.0
        );
        let l = l1_loss(sr, hr, Reduction::Sum).unwrap();
        assert_eq!(l.item().unwrap(), 2.0);
        assert_eq!(
            l1_loss(sr, hr, Reduction::Mean).unwrap().item().unwrap(),
            0.5
        );
        tape.backward(l).unwrap();
        assert_eq!(sr.grad().unwrap(), Tensor::ones(&[1, 2, 2]));
        let bad = tape.var(Tensor::zeros(&[2, 2]));
        assert!(matches!(
            l1_loss(bad, hr, Reduction::Sum),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn hook_required_for_perceptual_weight() {
        let tape = Tape::new();
        let x = tape.var(Tensor::zeros(&[1, 1, 8, 8]));
        let w = LossWeights::reference();
        let r = total_loss(
            x,
            x,
            &w,
            &EnhanceConfig::default(),
            &ContrastConfig::default(),
            None,
        );
        assert!(matches!(r, Err(Error::Config(_))));
        let json = serde_json::to_string(&w).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(
            (v["w1"].as_f64(), v["w2"].as_f64(), v["w3"].as_f64()),
            (Some(0.01), Some(1.0), Some(3e-5))
        );
    }

    #[test]
    fn config_validation() {
        let c = ContrastConfig {
            t_pos: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = ContrastConfig {
            mask_clamp: 4.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let w = LossWeights {
            w1: -1.0,
            ..Default::default()
        };
        assert!(w.validate().is_err());
    }
}
