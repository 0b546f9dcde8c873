//! Masked-region reconstruction errors.

use std::path::Path;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::io::write_msr;
use crate::model::loss::{component_mask, masked_loss, pixel_mask, LossKind};
use crate::model::Model;
use crate::raster::{Raster, Real};
use crate::tokenizer::{tube_mask, PatchConfig, TubeMask};
use crate::wavelet::{dwt_multi, idwt_multi, Component, DecompositionSet, WaveletFilter};

/// Anything that predicts a component set for a masked image.
pub trait Predictor {
    fn patch_config(&self) -> PatchConfig;
    fn predict(&self, x: &Raster<f64>, s: &DecompositionSet<f64>, mask: &TubeMask) -> Result<DecompositionSet<f64>>;
}

impl Predictor for Model {
    fn patch_config(&self) -> PatchConfig {
        Model::patch_config(self)
    }

    fn predict(&self, x: &Raster<f64>, _s: &DecompositionSet<f64>, mask: &TubeMask) -> Result<DecompositionSet<f64>> {
        Ok(self.forward(x, mask)?.prediction)
    }
}

/// Returns the true components.
pub struct OraclePredictor(pub PatchConfig);

impl Predictor for OraclePredictor {
    fn patch_config(&self) -> PatchConfig {
        self.0
    }

    fn predict(&self, _x: &Raster<f64>, s: &DecompositionSet<f64>, _mask: &TubeMask) -> Result<DecompositionSet<f64>> {
        Ok(s.clone())
    }
}

/// Predicts zeros everywhere.
pub struct ZeroPredictor(pub PatchConfig);

impl Predictor for ZeroPredictor {
    fn patch_config(&self) -> PatchConfig {
        self.0
    }

    fn predict(&self, _x: &Raster<f64>, s: &DecompositionSet<f64>, _mask: &TubeMask) -> Result<DecompositionSet<f64>> {
        Ok(s.zeros_like())
    }
}

/// Peak signal-to-noise ratio for unit peak; `inf` when the error is zero.
pub fn psnr(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

fn ser_psnr<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentError {
    pub level: usize,
    pub component: String,
    pub smooth_l1: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconReport {
    pub seed: u64,
    pub mask_ratio: f64,
    pub masked_tubes: usize,
    pub components: Vec<ComponentError>,
    pub pixel_mse: f64,
    #[serde(serialize_with = "ser_psnr")]
    pub psnr: f64,
    #[serde(skip)]
    pub prediction: DecompositionSet<f64>,
    #[serde(skip)]
    pub recon: Raster<f64>,
}

/// Masks the image with a tube mask drawn from `seed`, predicts, and scores
/// the masked region component by component and in pixel space. The
/// reconstruction is rounded to the input's precision before scoring.
pub fn reconstruction_report<P: Predictor, T: Real>(
    p: &P,
    x: &Raster<T>,
    mask_ratio: f64,
    seed: u64,
    beta: f64,
) -> Result<ReconReport> {
    let pc = p.patch_config();
    if x.shape() != (pc.channels, pc.height, pc.width) {
        return Err(Error::Config(format!(
            "image {:?} does not match predictor input {:?}",
            x.shape(),
            (pc.channels, pc.height, pc.width)
        )));
    }
    let x64: Raster<f64> = x.cast();
    let mut x64 = x64;
    x64.geo = x.geo.clone();
    let mask = tube_mask(pc.n_spatial(), mask_ratio, seed)?;
    let s = dwt_multi(&x64, pc.depth, &WaveletFilter::haar())?;
    let prediction = p.predict(&x64, &s, &mask)?;
    let cmask = component_mask(&pc, &mask);
    let mut components = Vec::new();
    let mut off = 0;
    for (((level, comp), truth), (_, pred)) in s.iter().zip(prediction.iter()) {
        if truth.shape() != pred.shape() {
            return Err(Error::Shape(format!("prediction for level {level} {comp} has the wrong shape")));
        }
        let m = &cmask[off..off + truth.len()];
        off += truth.len();
        components.push(ComponentError {
            level,
            component: comp.to_string(),
            smooth_l1: masked_loss(LossKind::SmoothL1 { beta }, pred.data(), truth.data(), m)?,
            mse: masked_loss(LossKind::Mse, pred.data(), truth.data(), m)?,
        });
    }
    // scored at the precision of the input
    let recon: Raster<f64> = idwt_multi(&prediction, &WaveletFilter::haar())?.cast::<T>().cast();
    let pixel_mse = masked_loss(LossKind::Mse, recon.data(), x64.data(), &pixel_mask(&pc, &mask))?;
    Ok(ReconReport {
        seed,
        mask_ratio,
        masked_tubes: mask.masked_count(),
        components,
        pixel_mse,
        psnr: psnr(pixel_mse),
        prediction,
        recon,
    })
}

/// Writes the reconstruction and every predicted component as MSR files.
pub fn write_dumps(r: &ReconReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_msr(&r.recon.cast::<f32>(), dir.join("recon.msr"))?;
    for ((level, comp), band) in r.prediction.iter() {
        let name = if comp == Component::LL {
            format!("pred_L{level}_LL.msr")
        } else {
            format!("pred_L{level}_{comp}.msr")
        };
        write_msr(&band.cast::<f32>(), dir.join(name))?;
    }
    Ok(())
}
