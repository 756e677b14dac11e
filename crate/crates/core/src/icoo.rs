//! Intensity of the centre-oriented optimisation problem.
//!
//! For every generated mini-patch, the distance to its nearest real patch is
//! divided by the summed distance to all other real patches. Small ratios
//! mean each output sits close to one real patch rather than between many;
//! the score is `-10 log10` of the ratios summed over all SR patches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    /// Average the per-round scores (after the log).
    #[default]
    MeanOfScores,
    /// Average the per-round sums, then take the log once.
    ScoreOfMeanSum,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcooConfig {
    pub patch_size: usize,
    /// Patches sampled from each SR image per round.
    pub sr_patches: usize,
    /// Patches sampled from each HR image per round; pooled over images.
    pub hr_patches: usize,
    pub rounds: usize,
    /// Lower bound applied to distances before dividing.
    pub epsilon: f64,
    /// Restrict each ratio to the `k` nearest HR patches.
    pub nearest_k: Option<usize>,
    pub seed: u64,
    pub aggregate: Aggregate,
}

impl Default for IcooConfig {
    fn default() -> Self {
        IcooConfig {
            patch_size: 12,
            sr_patches: 8,
            hr_patches: 100,
            rounds: 10,
            epsilon: 1e-8,
            nearest_k: None,
            seed: 0,
            aggregate: Aggregate::MeanOfScores,
        }
    }
}

impl IcooConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.sr_patches == 0 || self.hr_patches == 0 || self.rounds == 0
        {
            return Err(Error::Config(
                "patch_size, sr_patches, hr_patches and rounds must be >= 1".into(),
            ));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if matches!(self.nearest_k, Some(k) if k < 2) {
            return Err(Error::Config("nearest_k must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcooReport {
    pub score: f64,
    pub rounds: usize,
    pub per_round: Vec<f64>,
    pub sr_patch_count: usize,
    pub hr_patch_count: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub config: IcooConfig,
}

/// A square crop, flattened channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MiniPatch {
    pub top: usize,
    pub left: usize,
    pub data: Vec<f64>,
}

pub fn crop(image: &Tensor, top: usize, left: usize, size: usize) -> Result<MiniPatch> {
    let (c, h, w) = chw(image)?;
    if top + size > h || left + size > w {
        return Err(Error::Contract(format!(
            "crop {size}x{size} at ({top}, {left}) exceeds {h}x{w}"
        )));
    }
    let src = image.data();
    let mut data = Vec::with_capacity(c * size * size);
    for ci in 0..c {
        for y in top..top + size {
            let row = (ci * h + y) * w;
            data.extend_from_slice(&src[row + left..row + left + size]);
        }
    }
    Ok(MiniPatch { top, left, data })
}

fn chw(image: &Tensor) -> Result<(usize, usize, usize)> {
    match image.shape() {
        &[c, h, w] => Ok((c, h, w)),
        s => Err(Error::dim("mini-patch sampling", s, &[0, 0, 0])),
    }
}

/// `count` crops at uniformly random top-left corners, with replacement.
pub fn sample_mini_patches<R: Rng>(
    image: &Tensor,
    count: usize,
    size: usize,
    rng: &mut R,
) -> Result<Vec<MiniPatch>> {
    let (_, h, w) = chw(image)?;
    if size == 0 || h < size || w < size {
        return Err(Error::Contract(format!(
            "image {h}x{w} is smaller than patch size {size}"
        )));
    }
    (0..count)
        .map(|_| {
            let top = rng.gen_range(0..=h - size);
            let left = rng.gen_range(0..=w - size);
            crop(image, top, left, size)
        })
        .collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Nearest distance over the summed distance to the remaining HR patches.
///
/// Ties for the nearest patch go to the lowest index. Both numerator and
/// denominator are bounded below by `eps`.
pub fn p_star(sr: &[f64], hr: &[&[f64]], eps: f64, nearest_k: Option<usize>) -> Result<f64> {
    if hr.len() < 2 {
        return Err(Error::Contract(format!(
            "need at least 2 HR patches, got {}",
            hr.len()
        )));
    }
    if let Some(bad) = hr.iter().find(|h| h.len() != sr.len()) {
        return Err(Error::dim("p_star", &[sr.len()], &[bad.len()]));
    }
    let dists: Vec<f64> = hr.iter().map(|h| distance(h, sr)).collect();
    let mut nearest = 0;
    for (j, &d) in dists.iter().enumerate().skip(1) {
        if d < dists[nearest] {
            nearest = j;
        }
    }
    let rest: f64 = match nearest_k {
        None => dists
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != nearest)
            .map(|(_, d)| d)
            .sum(),
        Some(k) => {
            let mut order: Vec<usize> = (0..dists.len()).filter(|&j| j != nearest).collect();
            order.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)));
            order
                .iter()
                .take(k.saturating_sub(1))
                .map(|&j| dists[j])
                .sum()
        }
    };
    Ok(dists[nearest].max(eps) / rest.max(eps))
}

/// Sum of ratios over all SR patches against one HR pool.
pub fn ratio_sum(sr: &[MiniPatch], hr: &[MiniPatch], cfg: &IcooConfig) -> Result<f64> {
    let pool: Vec<&[f64]> = hr.iter().map(|p| p.data.as_slice()).collect();
    let one = |p: &MiniPatch| p_star(&p.data, &pool, cfg.epsilon, cfg.nearest_k);

    #[cfg(feature = "parallel")]
    let ratios: Result<Vec<f64>> = {
        use rayon::prelude::*;
        sr.par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let ratios: Result<Vec<f64>> = sr.iter().map(one).collect();

    // Summed in a fixed order so serial and parallel runs agree bit for bit.
    Ok(ratios?.iter().sum())
}

pub fn score_from_sum(sum: f64) -> f64 {
    -10.0 * sum.log10()
}

const ROLE_SR: u64 = 0;
const ROLE_HR: u64 = 1;

/// Independent stream for one image in one round.
fn stream_rng(seed: u64, round: usize, role: u64, image: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((round as u64) << 33) | (role << 32) | image as u64);
    rng
}

fn sample_all(
    images: &[Tensor],
    count: usize,
    cfg: &IcooConfig,
    round: usize,
    role: u64,
) -> Result<Vec<MiniPatch>> {
    let one = |(i, img): (usize, &Tensor)| {
        let mut rng = stream_rng(cfg.seed, round, role, i);
        sample_mini_patches(img, count, cfg.patch_size, &mut rng)
    };
    #[cfg(feature = "parallel")]
    let per_image: Result<Vec<Vec<MiniPatch>>> = {
        use rayon::prelude::*;
        images.par_iter().enumerate().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let per_image: Result<Vec<Vec<MiniPatch>>> = images.iter().enumerate().map(one).collect();
    Ok(per_image?.into_iter().flatten().collect())
}

/// Scores `[C, H, W]` SR images against a pool of HR crops over several
/// random rounds.
pub fn icoo(sr_images: &[Tensor], hr_images: &[Tensor], cfg: &IcooConfig) -> Result<IcooReport> {
    cfg.validate()?;
    if sr_images.is_empty() || hr_images.is_empty() {
        return Err(Error::Contract(
            "icoo needs non-empty SR and HR sets".into(),
        ));
    }
    let mut sums = Vec::with_capacity(cfg.rounds);
    let (mut n_sr, mut n_hr) = (0, 0);
    for round in 0..cfg.rounds {
        let sr = sample_all(sr_images, cfg.sr_patches, cfg, round, ROLE_SR)?;
        let hr = sample_all(hr_images, cfg.hr_patches, cfg, round, ROLE_HR)?;
        n_sr = sr.len();
        n_hr = hr.len();
        sums.push(ratio_sum(&sr, &hr, cfg)?);
    }
    let per_round: Vec<f64> = sums.iter().map(|&s| score_from_sum(s)).collect();
    let score = match cfg.aggregate {
        Aggregate::MeanOfScores => per_round.iter().sum::<f64>() / cfg.rounds as f64,
        Aggregate::ScoreOfMeanSum => score_from_sum(sums.iter().sum::<f64>() / cfg.rounds as f64),
    };
    Ok(IcooReport {
        score,
        rounds: cfg.rounds,
        per_round,
        sr_patch_count: n_sr,
        hr_patch_count: n_hr,
        epsilon: cfg.epsilon,
        seed: cfg.seed,
        config: *cfg,
    })
}
