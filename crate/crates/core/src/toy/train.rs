//! Two-phase training of the toy upsampler: L1 pre-training, then the
//! weighted total loss. Each phase uses a fresh Adam state and its own
//! cosine learning-rate decay.

use std::ops::ControlFlow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contrast::{l1_loss, total_loss, ContrastConfig, LossWeights};
use crate::error::{Error, Result};
use crate::fourier::EnhanceConfig;
use crate::icoo::crop;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::toy::model::{toy_forward, ToyModelParams};
use crate::toy::resize::resize_to;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub steps_per_epoch: usize,
    pub lr_phase1: f64,
    pub lr_phase2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    /// LR crop side; the HR crop is `lr_crop * scale`.
    pub lr_crop: usize,
    pub scale: usize,
    pub weights: LossWeights,
    pub enhance: EnhanceConfig,
    pub contrast: ContrastConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            phase1_epochs: 1,
            phase2_epochs: 2,
            steps_per_epoch: 100,
            lr_phase1: 5e-3,
            lr_phase2: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 4,
            lr_crop: 48,
            scale: 4,
            weights: LossWeights::default(),
            enhance: EnhanceConfig::default(),
            contrast: ContrastConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Settings sized for the bundled 96x96 synthetic set: 12x12 LR crops
    /// and a longer, cheap L1 phase.
    pub fn desk() -> Self {
        TrainConfig {
            phase1_epochs: 20,
            lr_crop: 12,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps_per_epoch == 0 || self.batch_size == 0 || self.lr_crop == 0 || self.scale == 0
        {
            return Err(Error::Config(
                "steps_per_epoch, batch_size, lr_crop and scale must be >= 1".into(),
            ));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} must be in (0, 1), got {b}")));
            }
        }
        if !(self.lr_phase1 >= 0.0 && self.lr_phase2 >= 0.0) {
            return Err(Error::Config("learning rates must be >= 0".into()));
        }
        self.weights.validate()?;
        self.enhance.validate()?;
        self.contrast.validate()?;
        if !(self.lr_crop * self.scale).is_multiple_of(self.contrast.patch_size) {
            return Err(Error::Config(format!(
                "HR crop {} is not divisible by patch size {}",
                self.lr_crop * self.scale,
                self.contrast.patch_size
            )));
        }
        Ok(())
    }

    pub fn phase1_steps(&self) -> usize {
        self.phase1_epochs * self.steps_per_epoch
    }

    pub fn phase2_steps(&self) -> usize {
        self.phase2_epochs * self.steps_per_epoch
    }
}

/// Cosine decay from `base` at step 0 towards 0 at step `total`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    base * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, epsilon: f64, sizes: &[usize]) -> Self {
        Adam {
            beta1,
            beta2,
            epsilon,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Contract("parameter/gradient count mismatch".into()));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::dim("adam", p.shape(), g.shape()));
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gv;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gv * gv;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                *pv -= lr * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Paired HR images and their bicubic LR versions.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub hr: Vec<Tensor>,
    pub lr: Vec<Tensor>,
    pub scale: usize,
}

impl TrainingSet {
    /// Crops each HR image to a multiple of `scale` and downsamples it.
    pub fn from_hr(images: &[Tensor], scale: usize) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Contract("training set is empty".into()));
        }
        if scale == 0 {
            return Err(Error::Config("scale must be >= 1".into()));
        }
        let mut hr = Vec::with_capacity(images.len());
        let mut lr = Vec::with_capacity(images.len());
        for img in images {
            let s = img.shape();
            if s.len() != 3 || s[1] < scale || s[2] < scale {
                return Err(Error::dim("training image", s, &[3, scale, scale]));
            }
            let (h, w) = (s[1] / scale * scale, s[2] / scale * scale);
            let cropped = Tensor::new(vec![s[0], h, w], crop_region(img, h, w))?;
            lr.push(resize_to(&cropped, h / scale, w / scale)?);
            hr.push(cropped);
        }
        Ok(TrainingSet { hr, lr, scale })
    }

    /// LR and HR batches for `step`, drawn from a stream keyed on the step
    /// index so assembly order never changes the samples.
    pub fn batch(
        &self,
        step: usize,
        batch_size: usize,
        lr_crop: usize,
        seed: u64,
    ) -> Result<(Tensor, Tensor)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(step as u64 + 1);
        let s = self.scale;
        let hr_crop = lr_crop * s;
        let mut lr_data = Vec::new();
        let mut hr_data = Vec::new();
        let c = self.lr[0].shape()[0];
        for _ in 0..batch_size {
            let k = rng.gen_range(0..self.lr.len());
            let ls = self.lr[k].shape();
            if ls[1] < lr_crop || ls[2] < lr_crop {
                return Err(Error::Contract(format!(
                    "LR image {}x{} smaller than crop {lr_crop}",
                    ls[1], ls[2]
                )));
            }
            let top = rng.gen_range(0..=ls[1] - lr_crop);
            let left = rng.gen_range(0..=ls[2] - lr_crop);
            lr_data.extend(crop(&self.lr[k], top, left, lr_crop)?.data);
            hr_data.extend(crop(&self.hr[k], top * s, left * s, hr_crop)?.data);
        }
        Ok((
            Tensor::new(vec![batch_size, c, lr_crop, lr_crop], lr_data)?,
            Tensor::new(vec![batch_size, c, hr_crop, hr_crop], hr_data)?,
        ))
    }
}

fn crop_region(img: &Tensor, h: usize, w: usize) -> Vec<f64> {
    let s = img.shape();
    let mut out = Vec::with_capacity(s[0] * h * w);
    for c in 0..s[0] {
        for y in 0..h {
            let row = (c * s[1] + y) * s[2];
            out.extend_from_slice(&img.data()[row..row + w]);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub phase: u8,
    pub lr: f64,
    pub l1: f64,
    /// Contrastive term; absent in phase 1 and on batches without a valid
    /// positive/negative split.
    pub ld: Option<f64>,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: ToyModelParams,
    pub trace: Vec<TraceRow>,
}

impl TrainOutput {
    pub fn phase(&self, phase: u8) -> Vec<&TraceRow> {
        self.trace.iter().filter(|r| r.phase == phase).collect()
    }
}

/// Writes the trace as CSV with columns `step,l1,ld,total`; `ld` is left
/// empty where it was not computed.
pub fn write_trace_csv<W: std::io::Write>(mut out: W, trace: &[TraceRow]) -> std::io::Result<()> {
    writeln!(out, "step,l1,ld,total")?;
    for r in trace {
        let ld = r.ld.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{}", r.step, r.l1, ld, r.total)?;
    }
    Ok(())
}

/// Means over consecutive non-overlapping windows.
pub fn window_means(values: &[f64], window: usize) -> Vec<f64> {
    values
        .chunks(window.max(1))
        .filter(|c| c.len() == window.max(1))
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

/// Per-step callback for [`train`].
pub type StepHook<'a> = &'a mut dyn FnMut(&TraceRow) -> ControlFlow<()>;

/// Runs both phases. `on_step` sees every trace row as it is produced and
/// may stop training early by returning `Break`.
pub fn train(
    set: &TrainingSet,
    cfg: &TrainConfig,
    mut on_step: Option<StepHook>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if set.scale != cfg.scale {
        return Err(Error::Config(format!(
            "training set scale {} differs from config scale {}",
            set.scale, cfg.scale
        )));
    }
    let mut params = ToyModelParams::init(cfg.scale, cfg.seed)?;
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.numel()).collect();
    let mut trace = Vec::with_capacity(cfg.phase1_steps() + cfg.phase2_steps());
    let mut global = 0;

    for (phase, steps, base_lr) in [
        (1u8, cfg.phase1_steps(), cfg.lr_phase1),
        (2u8, cfg.phase2_steps(), cfg.lr_phase2),
    ] {
        let mut adam = Adam::new(cfg.beta1, cfg.beta2, cfg.adam_epsilon, &sizes);
        for k in 0..steps {
            let lr = cosine_lr(base_lr, k, steps);
            let (lr_batch, hr_batch) = set.batch(global, cfg.batch_size, cfg.lr_crop, cfg.seed)?;

            let tape = Tape::new();
            let vars = params.on_tape(&tape, true);
            let sr = toy_forward(&vars, tape.constant(lr_batch))?;
            let hr = tape.constant(hr_batch);

            let (objective, l1, ld) = if phase == 1 {
                let l1 = l1_loss(sr, hr, cfg.weights.l1_reduction)?;
                (l1, l1, None)
            } else {
                match total_loss(sr, hr, &cfg.weights, &cfg.enhance, &cfg.contrast, None) {
                    Ok(terms) => (terms.total, terms.l1, terms.contrastive),
                    Err(Error::DegeneratePartition { .. }) => {
                        let l1 = l1_loss(sr, hr, cfg.weights.l1_reduction)?;
                        (l1.scale(cfg.weights.w1), l1, None)
                    }
                    Err(e) => return Err(e),
                }
            };
            let total = objective.item()?;
            if !total.is_finite() {
                return Err(Error::NonFiniteLoss { step: global });
            }
            let row = TraceRow {
                step: global,
                phase,
                lr,
                l1: l1.item()?,
                ld: ld.map(|v| v.item()).transpose()?,
                total,
            };

            tape.backward(objective)?;
            let grads: Vec<Tensor> = vars
                .vars()
                .iter()
                .zip(&sizes)
                .map(|(v, _)| v.grad().unwrap_or_else(|| Tensor::zeros(&v.shape())))
                .collect();
            adam.step(&mut params.tensors_mut(), &grads, lr)?;
            if !params.is_finite() {
                return Err(Error::NonFiniteLoss { step: global });
            }

            let flow = match on_step.as_deref_mut() {
                Some(cb) => cb(&row),
                None => ControlFlow::Continue(()),
            };
            trace.push(row);
            global += 1;
            if flow.is_break() {
                return Ok(TrainOutput { params, trace });
            }
        }
    }
    Ok(TrainOutput { params, trace })
}
