//! Finite-difference check of the reverse-mode gradients of `L_tot`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::raster::{Raster, Real};
use crate::tokenizer::TubeMask;

use super::net::Model;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradcheckOptions {
    /// Number of scalar parameters compared.
    pub samples: usize,
    /// Central-difference step.
    pub step: f64,
    /// Lower bound on the relative-error denominator, so that gradients at
    /// round-off level compare on an absolute scale.
    pub floor: f64,
    /// Combine steps `h` and `h/2` to cancel the leading truncation term.
    pub richardson: bool,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            samples: 256,
            step: 1e-2,
            floor: 1e-6,
            richardson: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub options: GradcheckOptions,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: GradcheckEntry,
}

pub fn rel_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Picks one element of every parameter tensor, then fills up to `samples`
/// with uniformly drawn elements.
fn pick(model: &Model, samples: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let sizes: Vec<usize> = model.params.iter().map(|p| p.value.data().len()).collect();
    let mut out: Vec<(usize, usize)> = sizes
        .iter()
        .enumerate()
        .map(|(t, &n)| (t, rng.gen_range(0..n)))
        .collect();
    let total: usize = sizes.iter().sum();
    while out.len() < samples {
        let mut k = rng.gen_range(0..total);
        let mut t = 0;
        while k >= sizes[t] {
            k -= sizes[t];
            t += 1;
        }
        if !out.contains(&(t, k)) {
            out.push((t, k));
        }
    }
    out.shuffle(rng);
    out.truncate(samples.max(1));
    out
}

pub fn gradcheck<T: Real>(model: &Model, x: &Raster<T>, mask: &TubeMask, opts: GradcheckOptions) -> Result<GradcheckReport> {
    if opts.samples == 0 || !(opts.step > 0.0) || !(opts.floor > 0.0) {
        return Err(Error::InvalidArgument(
            "gradcheck needs samples >= 1 and positive step and floor".into(),
        ));
    }
    let (_, grads) = model.loss_and_grads(x, mask)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let picks = pick(model, opts.samples, &mut rng);
    let mut probe = model.clone();
    let mut worst: Option<GradcheckEntry> = None;
    for &(t, i) in &picks {
        let orig = probe.params.by_id(t).value.data()[i];
        let mut eval = |v: f64| -> Result<f64> {
            probe.params.by_id_mut(t).value.data_mut()[i] = v;
            Ok(probe.forward(x, mask)?.terms.total())
        };
        let mut central = |h: f64| -> Result<f64> { Ok((eval(orig + h)? - eval(orig - h)?) / (2.0 * h)) };
        let coarse = central(opts.step)?;
        let numeric = if opts.richardson {
            let fine = central(opts.step / 2.0)?;
            (4.0 * fine - coarse) / 3.0
        } else {
            coarse
        };
        probe.params.by_id_mut(t).value.data_mut()[i] = orig;
        let analytic = grads[t].data()[i];
        let e = GradcheckEntry {
            param: model.params.by_id(t).name.clone(),
            index: i,
            analytic,
            numeric,
            rel_error: rel_error(analytic, numeric, opts.floor),
        };
        if worst.as_ref().map_or(true, |w| e.rel_error > w.rel_error) {
            worst = Some(e);
        }
    }
    let worst = worst.expect("at least one sample");
    Ok(GradcheckReport {
        options: opts,
        checked: picks.len(),
        max_rel_error: worst.rel_error,
        worst,
    })
}
