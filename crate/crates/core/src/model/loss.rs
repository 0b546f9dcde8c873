//! Masked reconstruction losses, as plain functions and as tape nodes.

use crate::autodiff::Function;
use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::tensor::Tensor;
use crate::tokenizer::{PatchConfig, TubeMask};
use crate::wavelet::{component_order, DecompositionSet};

pub fn smooth_l1(d: f64, beta: f64) -> f64 {
    let a = d.abs();
    if a < beta {
        0.5 * a * a / beta
    } else {
        a - 0.5 * beta
    }
}

fn smooth_l1_grad(d: f64, beta: f64) -> f64 {
    if d.abs() < beta {
        d / beta
    } else {
        d.signum()
    }
}

/// Per image element (channel-major, row-major): does it lie in a masked tube?
pub fn pixel_mask(cfg: &PatchConfig, mask: &TubeMask) -> Vec<bool> {
    level_mask(cfg, mask, cfg.base_patch, cfg.height, cfg.width)
}

fn level_mask(cfg: &PatchConfig, mask: &TubeMask, p: usize, h: usize, w: usize) -> Vec<bool> {
    let nw = cfg.grid().1;
    let mut plane = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            plane.push(mask.is_masked((y / p) * nw + x / p));
        }
    }
    let mut out = Vec::with_capacity(cfg.channels * h * w);
    for _ in 0..cfg.channels {
        out.extend_from_slice(&plane);
    }
    out
}

/// Same as [`pixel_mask`] for every component value, concatenated in
/// component order.
pub fn component_mask(cfg: &PatchConfig, mask: &TubeMask) -> Vec<bool> {
    let mut out = Vec::new();
    for (level, _) in component_order(cfg.depth) {
        let p = cfg.patch_size(level);
        let (h, w) = (cfg.height >> level, cfg.width >> level);
        out.extend(level_mask(cfg, mask, p, h, w));
    }
    out
}

/// Component values concatenated in component order.
pub fn flatten_components(s: &DecompositionSet<f64>) -> Vec<f64> {
    s.iter().flat_map(|(_, r)| r.data().iter().copied()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Mse,
    SmoothL1 { beta: f64 },
}

fn check(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<usize> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(Error::Shape(format!(
            "loss over {} predictions, {} targets and {} mask flags",
            pred.len(),
            target.len(),
            mask.len()
        )));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::InvalidArgument("loss over an empty mask".into()));
    }
    Ok(count)
}

/// Mean of the per-element loss over the masked elements.
pub fn masked_loss(kind: LossKind, pred: &[f64], target: &[f64], mask: &[bool]) -> Result<f64> {
    let count = check(pred, target, mask)?;
    let mut sum = 0.0;
    for ((p, t), &m) in pred.iter().zip(target).zip(mask) {
        if m {
            let d = p - t;
            sum += match kind {
                LossKind::Mse => d * d,
                LossKind::SmoothL1 { beta } => smooth_l1(d, beta),
            };
        }
    }
    Ok(sum / count as f64)
}

/// Pixel-space term: squared error over masked pixels, all channels.
pub fn loss_rec(x: &Raster<f64>, xbar: &Raster<f64>, cfg: &PatchConfig, mask: &TubeMask) -> Result<f64> {
    if x.shape() != xbar.shape() || x.shape() != (cfg.channels, cfg.height, cfg.width) {
        return Err(Error::Shape(format!(
            "reconstruction {:?} vs image {:?}",
            xbar.shape(),
            x.shape()
        )));
    }
    masked_loss(LossKind::Mse, xbar.data(), x.data(), &pixel_mask(cfg, mask))
}

/// Component-space term: smooth L1 over component values inside masked tubes.
pub fn loss_cmp(
    s: &DecompositionSet<f64>,
    sbar: &DecompositionSet<f64>,
    cfg: &PatchConfig,
    mask: &TubeMask,
    beta: f64,
) -> Result<f64> {
    let a = flatten_components(s);
    let b = flatten_components(sbar);
    masked_loss(LossKind::SmoothL1 { beta }, &b, &a, &component_mask(cfg, mask))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub rec: f64,
    pub cmp: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.rec + self.cmp
    }
}

/// Both terms with `x̄ = idwt_multi(S̄)`.
pub fn loss_total(
    x: &Raster<f64>,
    s: &DecompositionSet<f64>,
    sbar: &DecompositionSet<f64>,
    cfg: &PatchConfig,
    mask: &TubeMask,
    beta: f64,
) -> Result<LossTerms> {
    let xbar = crate::wavelet::idwt_multi(sbar, &crate::wavelet::WaveletFilter::haar())?;
    Ok(LossTerms {
        rec: loss_rec(x, &xbar, cfg, mask)?,
        cmp: loss_cmp(s, sbar, cfg, mask, beta)?,
    })
}

/// Tape node for [`masked_loss`] over a flattened prediction.
pub struct MaskedLoss {
    kind: LossKind,
    target: Vec<f64>,
    mask: Vec<bool>,
    count: usize,
}

impl MaskedLoss {
    /// Returns the op and its forward value.
    pub fn new(kind: LossKind, pred: &Tensor, target: Vec<f64>, mask: Vec<bool>) -> Result<(Self, Tensor)> {
        let count = check(pred.data(), &target, &mask)?;
        let value = masked_loss(kind, pred.data(), &target, &mask)?;
        Ok((
            Self {
                kind,
                target,
                mask,
                count,
            },
            Tensor::scalar(value),
        ))
    }
}

impl Function for MaskedLoss {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let pred = inputs[0];
        let g = grad.item() / self.count as f64;
        let mut out = Tensor::zeros(pred.rows(), pred.cols());
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            if self.mask[i] {
                let d = pred.data()[i] - self.target[i];
                *o = g * match self.kind {
                    LossKind::Mse => 2.0 * d,
                    LossKind::SmoothL1 { beta } => smooth_l1_grad(d, beta),
                };
            }
        }
        vec![Some(out)]
    }
}
