//! Straight-line reference implementations used as test oracles.
//!
//! Nothing here shares code with `decloss-core`. Every routine is written
//! directly from the defining formulas with plain loops: the Fourier
//! transforms are explicit double sums over complex exponentials, the
//! contrastive loss walks every (i, j) pair, and the resampler evaluates the
//! cubic kernel tap by tap in two dimensions.

use std::f64::consts::PI;

/// Parameters of the reference detail-enhanced contrastive loss.
#[derive(Clone, Debug)]
pub struct RefLoss {
    pub patch: usize,
    pub eta: f64,
    pub t_pos: f64,
    pub t_neg: f64,
    /// Divide the summed exponentials by the temperature instead of
    /// scaling the exponent.
    pub literal_temperature: bool,
    pub self_pairs: bool,
    pub alpha: f64,
    /// `None` selects `n / 4` per axis.
    pub mu: Option<f64>,
    pub max_value: f64,
    pub mask_clamp: f64,
    pub cos_epsilon: f64,
}

impl Default for RefLoss {
    fn default() -> Self {
        RefLoss {
            patch: 4,
            eta: 5.0,
            t_pos: 0.5,
            t_neg: 1.5,
            literal_temperature: false,
            self_pairs: true,
            alpha: 1.0,
            mu: None,
            max_value: 1.0,
            mask_clamp: 100.0,
            cos_epsilon: 1e-12,
        }
    }
}

pub fn inverse_gaussian(n: usize, alpha: f64, mu: f64) -> Vec<f64> {
    let center = (n as f64 - 1.0) / 2.0;
    (0..n)
        .map(|i| {
            let d = i as f64 - center;
            alpha * (-(d * d) / (2.0 * mu * mu)).exp()
        })
        .collect()
}

/// Enhances one `h x w` channel by explicit DFT sums.
pub fn enhance_channel(img: &[f64], h: usize, w: usize, alpha: f64, mu: Option<f64>) -> Vec<f64> {
    assert_eq!(img.len(), h * w);
    let kh = inverse_gaussian(h, alpha, mu.unwrap_or(h as f64 / 4.0));
    let kw = inverse_gaussian(w, alpha, mu.unwrap_or(w as f64 / 4.0));

    let mut spec_re = vec![0.0; h * w];
    let mut spec_im = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            let mut re = 0.0;
            let mut im = 0.0;
            for x in 0..h {
                for y in 0..w {
                    let phase = -2.0
                        * PI
                        * (((u * x) % h) as f64 / h as f64 + ((v * y) % w) as f64 / w as f64);
                    re += img[x * w + y] * phase.cos();
                    im += img[x * w + y] * phase.sin();
                }
            }
            let g = kh[u] * kw[v];
            spec_re[u * w + v] = re * g;
            spec_im[u * w + v] = im * g;
        }
    }

    let mut out = vec![0.0; h * w];
    for x in 0..h {
        for y in 0..w {
            let mut acc = 0.0;
            for u in 0..h {
                for v in 0..w {
                    let phase = 2.0
                        * PI
                        * (((u * x) % h) as f64 / h as f64 + ((v * y) % w) as f64 / w as f64);
                    acc += spec_re[u * w + v] * phase.cos() - spec_im[u * w + v] * phase.sin();
                }
            }
            out[x * w + y] = acc / (h * w) as f64;
        }
    }
    out
}

/// Enhances a `[b, c, h, w]` batch channel by channel.
pub fn enhance_batch(x: &[f64], dims: [usize; 4], alpha: f64, mu: Option<f64>) -> Vec<f64> {
    let [b, c, h, w] = dims;
    let mut out = Vec::with_capacity(x.len());
    for k in 0..b * c {
        out.extend(enhance_channel(
            &x[k * h * w..(k + 1) * h * w],
            h,
            w,
            alpha,
            mu,
        ));
    }
    out
}

/// Cuts a `[b, c, h, w]` batch into flattened `p x p` mini-patches.
pub fn mini_patches(x: &[f64], dims: [usize; 4], p: usize) -> Vec<Vec<f64>> {
    let [b, c, h, w] = dims;
    let mut patches = Vec::new();
    for bi in 0..b {
        for gy in 0..h / p {
            for gx in 0..w / p {
                let mut v = Vec::with_capacity(c * p * p);
                for ci in 0..c {
                    for py in 0..p {
                        for px in 0..p {
                            let y = gy * p + py;
                            let xx = gx * p + px;
                            v.push(x[((bi * c + ci) * h + y) * w + xx]);
                        }
                    }
                }
                patches.push(v);
            }
        }
    }
    patches
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn cosine(a: &[f64], b: &[f64], eps: f64) -> f64 {
    dot(a, b) / (norm(a).max(eps) * norm(b).max(eps))
}

/// Pairwise HR mask in dB.
pub fn mask(hr: &[Vec<f64>], max_value: f64, clamp: f64) -> Vec<Vec<f64>> {
    hr.iter()
        .map(|a| {
            hr.iter()
                .map(|b| {
                    let d: f64 = a
                        .iter()
                        .zip(b)
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                        .sqrt();
                    if d == 0.0 {
                        clamp
                    } else {
                        -20.0 * (d / max_value).log10()
                    }
                })
                .collect()
        })
        .collect()
}

/// Contrastive loss over already flattened mini-patches.
pub fn contrastive_from_patches(sr: &[Vec<f64>], hr: &[Vec<f64>], cfg: &RefLoss) -> f64 {
    let n = sr.len();
    let m = mask(hr, cfg.max_value, cfg.mask_clamp);
    let mut total = 0.0;
    for i in 0..n {
        let mut pos = 0.0;
        let mut neg = 0.0;
        for j in 0..n {
            if i == j && !cfg.self_pairs {
                continue;
            }
            let s_ss = cosine(&sr[i], &sr[j], cfg.cos_epsilon);
            let s_sh = cosine(&sr[i], &hr[j], cfg.cos_epsilon);
            let positive = m[i][j] >= cfg.eta;
            let t = if positive { cfg.t_pos } else { cfg.t_neg };
            let term = if cfg.literal_temperature {
                (s_ss.exp() + 2.0 * s_sh.exp()) / t
            } else {
                (s_ss / t).exp() + 2.0 * (s_sh / t).exp()
            };
            if positive {
                pos += term;
            } else {
                neg += term;
            }
        }
        total += (pos / neg).ln();
    }
    -total / n as f64
}

/// Full pipeline: enhance, cut into mini-patches, contrast.
pub fn decloss(sr: &[f64], hr: &[f64], dims: [usize; 4], cfg: &RefLoss) -> f64 {
    let sr_e = enhance_batch(sr, dims, cfg.alpha, cfg.mu);
    let hr_e = enhance_batch(hr, dims, cfg.alpha, cfg.mu);
    let sp = mini_patches(&sr_e, dims, cfg.patch);
    let hp = mini_patches(&hr_e, dims, cfg.patch);
    contrastive_from_patches(&sp, &hp, cfg)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += (x - y) * (x - y);
    }
    s.sqrt()
}

/// Nearest-to-rest distance ratio by scanning all HR patches.
pub fn p_star(sr: &[f64], hr: &[Vec<f64>], eps: f64) -> f64 {
    let d: Vec<f64> = hr.iter().map(|h| euclid(h, sr)).collect();
    let mut k = 0;
    for j in 1..d.len() {
        if d[j] < d[k] {
            k = j;
        }
    }
    let mut rest = 0.0;
    for (j, dj) in d.iter().enumerate() {
        if j != k {
            rest += dj;
        }
    }
    d[k].max(eps) / rest.max(eps)
}

/// One round of the intensity score over explicit patch sets.
pub fn icoo_round(sr: &[Vec<f64>], hr: &[Vec<f64>], eps: f64) -> f64 {
    let mut total = 0.0;
    for s in sr {
        total += p_star(s, hr, eps);
    }
    -10.0 * total.log10()
}

fn catmull_rom(x: f64) -> f64 {
    let a = -0.5;
    let t = x.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Two-dimensional cubic resampling of one channel evaluated tap by tap.
///
/// When shrinking, the kernel is stretched by the inverse scale so that it
/// integrates over the source footprint of each output pixel.
pub fn bicubic_channel(img: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let sy = out_h as f64 / h as f64;
    let sx = out_w as f64 / w as f64;
    let fy = sy.min(1.0);
    let fx = sx.min(1.0);
    let mut out = vec![0.0; out_h * out_w];
    for oy in 0..out_h {
        for ox in 0..out_w {
            let cy = (oy as f64 + 0.5) / sy - 0.5;
            let cx = (ox as f64 + 0.5) / sx - 0.5;
            let mut acc = 0.0;
            let mut wsum = 0.0;
            let ry = (2.0 / fy).ceil() as i64 + 1;
            let rx = (2.0 / fx).ceil() as i64 + 1;
            for iy in (cy.floor() as i64 - ry)..=(cy.floor() as i64 + ry) {
                let wy = catmull_rom((cy - iy as f64) * fy);
                if wy == 0.0 {
                    continue;
                }
                for ix in (cx.floor() as i64 - rx)..=(cx.floor() as i64 + rx) {
                    let wx = catmull_rom((cx - ix as f64) * fx);
                    if wx == 0.0 {
                        continue;
                    }
                    let py = iy.clamp(0, h as i64 - 1) as usize;
                    let px = ix.clamp(0, w as i64 - 1) as usize;
                    acc += wy * wx * img[py * w + px];
                    wsum += wy * wx;
                }
            }
            out[oy * out_w + ox] = acc / wsum;
        }
    }
    out
}

/// Small deterministic generator so oracle-driven tests do not depend on
/// the implementation crate's RNG plumbing.
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn fill(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.uniform()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_orthonormal_pair() {
        let sr = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let cfg = RefLoss::default();
        let l = contrastive_from_patches(&sr, &sr, &cfg);
        assert!((l + 2.0).abs() < 1e-12);
        let lit = RefLoss {
            literal_temperature: true,
            ..cfg
        };
        let l = contrastive_from_patches(&sr, &sr, &lit);
        assert!((l + 1.0 + 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dft_enhance_constant() {
        let img = vec![0.7; 16];
        let out = enhance_channel(&img, 4, 4, 1.0, Some(1.0));
        for v in out {
            assert!((v - 0.7 * (-2.25f64).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn bicubic_identity() {
        let mut rng = SplitMix(3);
        let img = rng.fill(36);
        let out = bicubic_channel(&img, 6, 6, 6, 6);
        for (a, b) in img.iter().zip(&out) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
