//! The pretraining loop.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::config::RunConfig;
use crate::model::{save_checkpoint, Model, ModelConfig, ModelState};
use crate::raster::Raster;
use crate::tensor::Tensor;
use crate::tokenizer::TubeMask;

use super::augment::{apply_augment, AugmentConfig, AugmentParams};
use super::optim::{optimizer_step, AdamW};

/// One metrics-log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub epoch: usize,
    pub l_rec: f64,
    pub l_cmp: f64,
    pub l_tot: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainReport {
    pub metrics: Vec<StepMetrics>,
    /// Mean `L_tot` over the steps of each epoch.
    pub epoch_means: Vec<f64>,
    pub state: ModelState,
    /// Parameters whose gradient was exactly zero at every step.
    pub dead_params: Vec<String>,
    pub checkpoint: Option<PathBuf>,
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.wmck";
pub const CONFIG_FILE: &str = "config.json";

fn check_data(cfg: &ModelConfig, data: &[Raster<f32>]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    for (i, x) in data.iter().enumerate() {
        if x.shape() != (cfg.channels, cfg.height, cfg.width) {
            return Err(Error::Config(format!(
                "sample {i} has shape {:?}, model expects {:?}",
                x.shape(),
                (cfg.channels, cfg.height, cfg.width)
            )));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("sample {i}")));
        }
    }
    Ok(())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn write_checkpoint(state: &ModelState, dir: &Path) -> Result<PathBuf> {
    let tmp = dir.join(format!("{CHECKPOINT_FILE}.tmp"));
    let path = dir.join(CHECKPOINT_FILE);
    save_checkpoint(state, &tmp)?;
    fs::rename(&tmp, &path).map_err(io_err(&path))?;
    Ok(path)
}

/// Trains from scratch on `data`. With `out_dir`, writes the resolved config,
/// the metrics log and periodic checkpoints there.
pub fn pretrain(run: &RunConfig, data: &[Raster<f32>], out_dir: Option<&Path>) -> Result<PretrainReport> {
    let first = data.first().ok_or_else(|| Error::Config("empty dataset".into()))?;
    let (c, h, w) = first.shape();
    let run = run.resolved(c, h, w)?;
    let train = &run.train;
    let model_cfg = run.model.clone().expect("resolved model");
    check_data(&model_cfg, data)?;

    let mut log = None;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let cfg_path = dir.join(CONFIG_FILE);
        fs::write(&cfg_path, serde_json::to_string_pretty(&run)?).map_err(io_err(&cfg_path))?;
        let p = dir.join(METRICS_FILE);
        log = Some(BufWriter::new(File::create(&p).map_err(io_err(&p))?));
    }

    let model = Model::new(model_cfg.clone(), train.seed)?;
    let mut state = ModelState::new(model, train.seed.wrapping_add(1));
    let opt = AdamW {
        lr: train.lr,
        weight_decay: train.weight_decay,
        betas: (train.betas[0], train.betas[1]),
        eps: train.eps,
    };
    let aug = AugmentConfig::default();
    let n_spatial = model_cfg.patch_config().n_spatial();
    let n_params = state.model.params.len();
    let mut alive = vec![false; n_params];
    let mut metrics = Vec::new();
    let mut epoch_means = Vec::with_capacity(train.epochs);
    let mut last_good: Option<PathBuf> = None;
    let start = Instant::now();

    for epoch in 0..train.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut state.rng);
        let mut epoch_sum = 0.0;
        let mut epoch_steps = 0;
        for batch in order.chunks(train.batch_size) {
            let step = state.step + 1;
            let mut grads: Vec<Tensor> = state
                .model
                .params
                .iter()
                .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect();
            let (mut rec, mut cmp) = (0.0, 0.0);
            for &i in batch {
                let p = AugmentParams::sample(&mut state.rng, h, w, &aug);
                let x = apply_augment(&data[i], &p, &aug);
                let mask = TubeMask::sample(n_spatial, train.mask_ratio, &mut state.rng)?;
                let (out, g) = match state.model.loss_and_grads(&x, &mask) {
                    Ok(v) => v,
                    Err(Error::NonFinite(what)) => {
                        return Err(Error::Diverged {
                            step: step as usize,
                            reason: format!("non-finite {what}"),
                            last_good,
                        })
                    }
                    Err(e) => return Err(e),
                };
                rec += out.terms.rec;
                cmp += out.terms.cmp;
                for (acc, g) in grads.iter_mut().zip(&g) {
                    acc.add_assign(g);
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for (k, g) in grads.iter_mut().enumerate() {
                g.data_mut().iter_mut().for_each(|v| *v *= inv);
                alive[k] |= g.data().iter().any(|&v| v != 0.0);
            }
            optimizer_step(&mut state, &grads, &opt)?;
            if !state.model.params.iter().all(|p| p.value.is_finite()) {
                return Err(Error::Diverged {
                    step: step as usize,
                    reason: "non-finite parameters after update".into(),
                    last_good,
                });
            }
            let m = StepMetrics {
                step,
                epoch,
                l_rec: rec * inv,
                l_cmp: cmp * inv,
                l_tot: (rec + cmp) * inv,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            };
            epoch_sum += m.l_tot;
            epoch_steps += 1;
            if let Some(f) = log.as_mut() {
                let line = serde_json::to_string(&m)?;
                writeln!(f, "{line}").map_err(io_err(out_dir.unwrap()))?;
            }
            metrics.push(m);
        }
        epoch_means.push(epoch_sum / epoch_steps as f64);
        if let Some(dir) = out_dir {
            if (epoch + 1) % train.checkpoint_every == 0 || epoch + 1 == train.epochs {
                last_good = Some(write_checkpoint(&state, dir)?);
            }
        }
    }
    if let Some(mut f) = log {
        f.flush().map_err(io_err(out_dir.unwrap()))?;
    }
    let dead_params = state
        .model
        .params
        .iter()
        .zip(&alive)
        .filter(|(_, &a)| !a)
        .map(|(p, _)| p.name.clone())
        .collect();
    Ok(PretrainReport {
        metrics,
        epoch_means,
        state,
        dead_params,
        checkpoint: last_good,
    })
}

/// Reads a metrics log written by [`pretrain`].
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<StepMetrics>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
