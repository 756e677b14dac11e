//! Flat `key = value` run configuration.
//!
//! ```text
//! # comments run to the end of the line
//! enhance.alpha = 1.0
//! contrast.patch_size = 8
//! icoo.nearest_k = none
//! ```
//!
//! Keys are `section.field`; unknown keys are rejected.

use std::path::Path;

use decloss::toy::TrainConfig;
use decloss::{
    Aggregate, ContrastConfig, EnhanceConfig, IcooConfig, InverseMode, LossWeights, Reduction,
    TempMode,
};
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunConfig {
    pub enhance: EnhanceConfig,
    pub contrast: ContrastConfig,
    pub icoo: IcooConfig,
    pub weights: LossWeights,
    /// Only the optimisation fields are read from here; the loss settings
    /// come from the sections above.
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::desk();
        RunConfig {
            enhance: train.enhance,
            contrast: train.contrast,
            icoo: IcooConfig::default(),
            weights: train.weights,
            train,
        }
    }
}

pub const KEYS: &[&str] = &[
    "enhance.alpha",
    "enhance.mu",
    "enhance.inverse",
    "contrast.patch_size",
    "contrast.eta",
    "contrast.t_pos",
    "contrast.t_neg",
    "contrast.temp_mode",
    "contrast.max_value",
    "contrast.mask_clamp",
    "contrast.cos_epsilon",
    "contrast.self_pairs",
    "icoo.patch_size",
    "icoo.sr_patches",
    "icoo.hr_patches",
    "icoo.rounds",
    "icoo.epsilon",
    "icoo.nearest_k",
    "icoo.seed",
    "icoo.aggregate",
    "weights.w1",
    "weights.w2",
    "weights.w3",
    "weights.l1_reduction",
    "train.phase1_epochs",
    "train.phase2_epochs",
    "train.steps_per_epoch",
    "train.lr_phase1",
    "train.lr_phase2",
    "train.beta1",
    "train.beta2",
    "train.adam_epsilon",
    "train.batch_size",
    "train.lr_crop",
    "train.scale",
    "train.seed",
];

fn bad(key: &str, value: &str, expected: &str) -> String {
    format!("{key}: cannot read {value:?} as {expected}")
}

fn num<T: std::str::FromStr>(key: &str, v: &str, what: &str) -> Result<T, String> {
    v.parse().map_err(|_| bad(key, v, what))
}

fn float(key: &str, v: &str) -> Result<f64, String> {
    let x: f64 = num(key, v, "a number")?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(bad(key, v, "a finite number"))
    }
}

fn is_none(v: &str) -> bool {
    matches!(v, "none" | "auto")
}

impl RunConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", n + 1))?;
            cfg.set(key.trim(), value.trim().trim_matches('"'))
                .map_err(|e| format!("line {}: {e}", n + 1))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let (e, c, i, w, t) = (
            &mut self.enhance,
            &mut self.contrast,
            &mut self.icoo,
            &mut self.weights,
            &mut self.train,
        );
        match key {
            "enhance.alpha" => e.alpha = float(key, v)?,
            "enhance.mu" => {
                e.mu = if is_none(v) {
                    None
                } else {
                    Some(float(key, v)?)
                }
            }
            "enhance.inverse" => {
                e.inverse = match v {
                    "exact" => InverseMode::Exact,
                    "paper_literal" => InverseMode::PaperLiteral,
                    _ => return Err(bad(key, v, "exact or paper_literal")),
                }
            }
            "contrast.patch_size" => c.patch_size = num(key, v, "a count")?,
            "contrast.eta" => c.eta = float(key, v)?,
            "contrast.t_pos" => c.t_pos = float(key, v)?,
            "contrast.t_neg" => c.t_neg = float(key, v)?,
            "contrast.temp_mode" => {
                c.temp_mode = match v {
                    "inside_exp" => TempMode::InsideExp,
                    "paper_literal" => TempMode::PaperLiteral,
                    _ => return Err(bad(key, v, "inside_exp or paper_literal")),
                }
            }
            "contrast.max_value" => c.max_value = float(key, v)?,
            "contrast.mask_clamp" => c.mask_clamp = float(key, v)?,
            "contrast.cos_epsilon" => c.cos_epsilon = float(key, v)?,
            "contrast.self_pairs" => c.self_pairs = num(key, v, "true or false")?,
            "icoo.patch_size" => i.patch_size = num(key, v, "a count")?,
            "icoo.sr_patches" => i.sr_patches = num(key, v, "a count")?,
            "icoo.hr_patches" => i.hr_patches = num(key, v, "a count")?,
            "icoo.rounds" => i.rounds = num(key, v, "a count")?,
            "icoo.epsilon" => i.epsilon = float(key, v)?,
            "icoo.nearest_k" => {
                i.nearest_k = if is_none(v) {
                    None
                } else {
                    Some(num(key, v, "a count")?)
                }
            }
            "icoo.seed" => i.seed = num(key, v, "an unsigned integer")?,
            "icoo.aggregate" => {
                i.aggregate = match v {
                    "mean_of_scores" => Aggregate::MeanOfScores,
                    "score_of_mean_sum" => Aggregate::ScoreOfMeanSum,
                    _ => return Err(bad(key, v, "mean_of_scores or score_of_mean_sum")),
                }
            }
            "weights.w1" => w.w1 = float(key, v)?,
            "weights.w2" => w.w2 = float(key, v)?,
            "weights.w3" => w.w3 = float(key, v)?,
            "weights.l1_reduction" => {
                w.l1_reduction = match v {
                    "sum" => Reduction::Sum,
                    "mean" => Reduction::Mean,
                    _ => return Err(bad(key, v, "sum or mean")),
                }
            }
            "train.phase1_epochs" => t.phase1_epochs = num(key, v, "a count")?,
            "train.phase2_epochs" => t.phase2_epochs = num(key, v, "a count")?,
            "train.steps_per_epoch" => t.steps_per_epoch = num(key, v, "a count")?,
            "train.lr_phase1" => t.lr_phase1 = float(key, v)?,
            "train.lr_phase2" => t.lr_phase2 = float(key, v)?,
            "train.beta1" => t.beta1 = float(key, v)?,
            "train.beta2" => t.beta2 = float(key, v)?,
            "train.adam_epsilon" => t.adam_epsilon = float(key, v)?,
            "train.batch_size" => t.batch_size = num(key, v, "a count")?,
            "train.lr_crop" => t.lr_crop = num(key, v, "a count")?,
            "train.scale" => t.scale = num(key, v, "a count")?,
            "train.seed" => t.seed = num(key, v, "an unsigned integer")?,
            _ => {
                let hint = KEYS
                    .iter()
                    .find(|k| k.rsplit('.').next() == key.rsplit('.').next())
                    .map(|k| format!(" (did you mean {k}?)"))
                    .unwrap_or_default();
                return Err(format!("unknown key {key:?}{hint}"));
            }
        }
        Ok(())
    }

    /// Training settings with the loss sections folded in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            weights: self.weights,
            enhance: self.enhance,
            contrast: self.contrast,
            ..self.train
        }
    }

    /// JSON echo with one object per section, mirroring the file keys.
    pub fn echo(&self) -> Value {
        let mut train = serde_json::to_value(self.train).expect("plain data");
        if let Value::Object(m) = &mut train {
            for k in ["weights", "enhance", "contrast"] {
                m.remove(k);
            }
        }
        json!({
            "enhance": self.enhance,
            "contrast": self.contrast,
            "icoo": self.icoo,
            "weights": self.weights,
            "train": train,
        })
    }
}
