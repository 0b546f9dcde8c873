use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::wavelet::component_order;

use super::config::ModelConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Named parameter tensors in a fixed registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        let name = name.into();
        let id = self.params.len();
        assert!(
            self.index.insert(name.clone(), id).is_none(),
            "duplicate parameter {name}"
        );
        self.params.push(Param { name, value });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.params[self.id(name)?].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let id = self.id(name)?;
        Ok(&mut self.params[id].value)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn by_id(&self, id: usize) -> &Param {
        &self.params[id]
    }

    pub fn by_id_mut(&mut self, id: usize) -> &mut Param {
        &mut self.params[id]
    }

    pub fn element_count(&self) -> usize {
        self.params.iter().map(|p| p.value.data().len()).sum()
    }

    /// Rounds every value to the nearest `f32`, the on-disk precision.
    pub fn quantize(&mut self) {
        for p in &mut self.params {
            for v in p.value.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}

fn trunc_normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Tensor {
    let normal = Normal::new(0.0, std).expect("positive std");
    let data = (0..rows * cols)
        .map(|_| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= 2.0 * std {
                break v;
            }
        })
        .collect();
    Tensor::from_vec(rows, cols, data).expect("shape")
}

fn ones(cols: usize) -> Tensor {
    Tensor::from_vec(1, cols, vec![1.0; cols]).expect("shape")
}

fn add_linear<R: Rng + ?Sized>(p: &mut ParamStore, rng: &mut R, name: &str, fan_in: usize, fan_out: usize, std: f64) {
    p.insert(format!("{name}.weight"), trunc_normal(rng, fan_in, fan_out, std));
    p.insert(format!("{name}.bias"), Tensor::zeros(1, fan_out));
}

fn add_norm(p: &mut ParamStore, name: &str, dim: usize) {
    p.insert(format!("{name}.weight"), ones(dim));
    p.insert(format!("{name}.bias"), Tensor::zeros(1, dim));
}

fn add_block<R: Rng + ?Sized>(p: &mut ParamStore, rng: &mut R, prefix: &str, dim: usize, mlp: usize, std: f64) {
    add_norm(p, &format!("{prefix}.norm1"), dim);
    add_linear(p, rng, &format!("{prefix}.attn.qkv"), dim, 3 * dim, std);
    add_linear(p, rng, &format!("{prefix}.attn.proj"), dim, dim, std);
    add_norm(p, &format!("{prefix}.norm2"), dim);
    add_linear(p, rng, &format!("{prefix}.mlp.fc1"), dim, mlp, std);
    add_linear(p, rng, &format!("{prefix}.mlp.fc2"), mlp, dim, std);
}

pub fn pred_prefix(level: usize, component: crate::wavelet::Component) -> String {
    format!("pred.level{level}.{component}")
}

/// Registers and initializes every parameter: truncated normal for weights
/// and the mask token, zeros for biases, identity for layer norms.
pub fn init_params<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> ParamStore {
    let std = cfg.init_std;
    let pc = cfg.patch_config();
    let (d, dd) = (cfg.encoder.dim, cfg.decoder.dim);
    let mut p = ParamStore::new();
    for level in 1..=cfg.levels {
        add_linear(&mut p, rng, &format!("patch_embed.level{level}"), pc.patch_dim(level), d, std);
    }
    add_linear(&mut p, rng, "patch_embed.ll", pc.patch_dim(cfg.levels), d, std);
    add_linear(&mut p, rng, "gpe", cfg.sh_cutoff * cfg.sh_cutoff, d, std);
    for i in 0..cfg.encoder.depth {
        add_block(&mut p, rng, &format!("encoder.blocks.{i}"), d, cfg.encoder.mlp_dim, std);
    }
    add_norm(&mut p, "encoder.norm", d);
    add_linear(&mut p, rng, "decoder.embed", d, dd, std);
    p.insert("decoder.mask_token", trunc_normal(rng, 1, dd, std));
    for i in 0..cfg.decoder.depth {
        add_block(&mut p, rng, &format!("decoder.blocks.{i}"), dd, cfg.decoder.mlp_dim, std);
    }
    add_norm(&mut p, "decoder.norm", dd);
    for (level, comp) in component_order(cfg.levels) {
        let prefix = pred_prefix(level, comp);
        add_linear(&mut p, rng, &format!("{prefix}.fc1"), dd, dd, std);
        add_linear(&mut p, rng, &format!("{prefix}.fc2"), dd, pc.patch_dim(level), std);
    }
    p.quantize();
    p
}
