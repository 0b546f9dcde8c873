//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::model::{ModelState, Moments};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            betas: (0.9, 0.999),
            eps: 1e-8,
        }
    }
}

fn q(v: f64) -> f64 {
    v as f32 as f64
}

/// One update of every parameter. Parameters and moments are rounded to
/// `f32` afterwards so that a saved state reloads exactly.
pub fn optimizer_step(state: &mut ModelState, grads: &[Tensor], opt: &AdamW) -> Result<()> {
    let params = &mut state.model.params;
    if grads.len() != params.len() {
        return Err(Error::Shape(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.value.shape() != g.shape() {
            return Err(Error::Shape(format!("gradient of {} has shape {:?}", p.name, g.shape())));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {}", p.name)));
        }
    }
    let moments = state.moments.get_or_insert_with(|| Moments::zeros(params));
    let t = state.step + 1;
    let (b1, b2) = opt.betas;
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for (k, p) in params.iter_mut().enumerate() {
        let m = moments.m[k].data_mut();
        let v = moments.v[k].data_mut();
        for (i, w) in p.value.data_mut().iter_mut().enumerate() {
            let gi = grads[k].data()[i];
            m[i] = q(b1 * m[i] + (1.0 - b1) * gi);
            v[i] = q(b2 * v[i] + (1.0 - b2) * gi * gi);
            let decayed = *w - opt.lr * opt.weight_decay * *w;
            let step = opt.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + opt.eps);
            *w = q(decayed - step);
        }
    }
    state.step = t;
    Ok(())
}
