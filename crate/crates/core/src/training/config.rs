use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_wd")]
    pub weight_decay: f64,
    #[serde(default = "d_betas")]
    pub betas: [f64; 2],
    #[serde(default = "d_eps")]
    pub eps: f64,
    #[serde(default = "d_ratio")]
    pub mask_ratio: f64,
    /// Wavelet depth `N`.
    #[serde(default = "d_levels")]
    pub levels: usize,
    #[serde(default)]
    pub seed: u64,
    /// Directory of `.msr` samples; absent means "generate from the synth spec".
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default = "d_size")]
    pub model_size: ModelSize,
    /// Write a checkpoint every this many epochs (the final one is always written).
    #[serde(default = "d_ckpt")]
    pub checkpoint_every: usize,
}

fn d_epochs() -> usize {
    20
}
fn d_batch() -> usize {
    8
}
fn d_lr() -> f64 {
    1e-4
}
fn d_wd() -> f64 {
    0.05
}
fn d_betas() -> [f64; 2] {
    [0.9, 0.999]
}
fn d_eps() -> f64 {
    1e-8
}
fn d_ratio() -> f64 {
    0.75
}
fn d_levels() -> usize {
    4
}
fn d_size() -> ModelSize {
    ModelSize::Tiny
}
fn d_ckpt() -> usize {
    5
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: d_epochs(),
            batch_size: d_batch(),
            lr: d_lr(),
            weight_decay: d_wd(),
            betas: d_betas(),
            eps: d_eps(),
            mask_ratio: d_ratio(),
            levels: d_levels(),
            seed: 0,
            dataset: None,
            model_size: d_size(),
            checkpoint_every: d_ckpt(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.levels == 0 || self.checkpoint_every == 0 {
            return Err(Error::Config(
                "epochs, batch_size, levels and checkpoint_every must be positive".into(),
            ));
        }
        if !(self.lr > 0.0) || !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("lr and eps must be positive, weight_decay non-negative".into()));
        }
        if self.betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::Config(format!("betas {:?} must lie in [0, 1)", self.betas)));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::Config(format!("mask ratio {} must lie in (0, 1)", self.mask_ratio)));
        }
        Ok(())
    }
}
