//! Multi-level patch embedding, sinusoidal positional encoding and tube
//! masking.
//!
//! Level `j` uses patch size `P_base / 2^j`, so every component yields the same
//! `n_H x n_W` token grid and token `(r, c)` of every component covers the
//! `P_base x P_base` region `(r, c)` of the original image.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::{Raster, Real};
use crate::tensor::Tensor;
use crate::wavelet::{component_order, Component, DecompositionSet};

/// Geometry of the token grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub base_patch: usize,
    pub depth: usize,
}

impl PatchConfig {
    pub fn new(channels: usize, height: usize, width: usize, base_patch: usize, depth: usize) -> Result<Self> {
        let cfg = Self {
            channels,
            height,
            width,
            base_patch,
            depth,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.channels == 0 {
            return Err(Error::Config("depth and channels must be positive".into()));
        }
        let block = 1usize << self.depth;
        if self.base_patch == 0 || self.base_patch % block != 0 {
            return Err(Error::Config(format!(
                "base patch {} is not divisible by 2^{} = {block}",
                self.base_patch, self.depth
            )));
        }
        if self.height % self.base_patch != 0 || self.width % self.base_patch != 0 {
            return Err(Error::Config(format!(
                "image {}x{} is not divisible by base patch {}",
                self.height, self.width, self.base_patch
            )));
        }
        Ok(())
    }

    /// Patch side at decomposition level `level` (1-based).
    pub fn patch_size(&self, level: usize) -> usize {
        self.base_patch >> level
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.base_patch, self.width / self.base_patch)
    }

    pub fn n_spatial(&self) -> usize {
        let (h, w) = self.grid();
        h * w
    }

    pub fn n_components(&self) -> usize {
        3 * self.depth + 1
    }

    pub fn sequence_len(&self) -> usize {
        self.n_spatial() * self.n_components()
    }

    /// Flattened patch length at `level`.
    pub fn patch_dim(&self, level: usize) -> usize {
        let p = self.patch_size(level);
        self.channels * p * p
    }

    /// Original-image pixel rectangle `(y0, x0, y1, x1)` (exclusive ends)
    /// covered by spatial token `index`.
    pub fn tube_region(&self, index: usize) -> (usize, usize, usize, usize) {
        let (_, nw) = self.grid();
        let (r, c) = (index / nw, index % nw);
        let p = self.base_patch;
        (r * p, c * p, (r + 1) * p, (c + 1) * p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenTag {
    pub level: usize,
    pub component: Component,
    pub row: usize,
    pub col: usize,
}

/// Embedded tokens in canonical layout: component-major in
/// [`component_order`], row-major spatial within each component.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens: Tensor,
    pub tags: Vec<TokenTag>,
    pub grid: (usize, usize),
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn n_spatial(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn spatial_index(&self, i: usize) -> usize {
        self.tags[i].row * self.grid.1 + self.tags[i].col
    }
}

/// Tags of the full sequence.
pub fn sequence_tags(cfg: &PatchConfig) -> Vec<TokenTag> {
    let (nh, nw) = cfg.grid();
    let mut tags = Vec::with_capacity(cfg.sequence_len());
    for (level, component) in component_order(cfg.depth) {
        for row in 0..nh {
            for col in 0..nw {
                tags.push(TokenTag {
                    level,
                    component,
                    row,
                    col,
                });
            }
        }
    }
    tags
}

/// Affine patch embedding: `weight` is `C p^2 x D`, `bias` is `1 x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbedding {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// One embedding per level for the detail bands (shared by the three bands of
/// that level) and a separate one for the deepest approximation band.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbeddings {
    pub levels: Vec<PatchEmbedding>,
    pub ll: PatchEmbedding,
}

impl PatchEmbeddings {
    pub fn for_component(&self, level: usize, c: Component) -> &PatchEmbedding {
        if c == Component::LL {
            &self.ll
        } else {
            &self.levels[level - 1]
        }
    }
}

/// Rows are patches in row-major grid order; each row is the patch flattened
/// channel-major then row-major (`ch * p^2 + dy * p + dx`).
pub fn patchify<T: Real>(component: &Raster<T>, p: usize) -> Result<Tensor> {
    let (c, h, w) = component.shape();
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::Shape(format!(
            "component {h}x{w} not divisible by patch size {p}"
        )));
    }
    let (nh, nw) = (h / p, w / p);
    let dim = c * p * p;
    let mut out = Tensor::zeros(nh * nw, dim);
    for r in 0..nh {
        for col in 0..nw {
            let row = out.row_mut(r * nw + col);
            for ch in 0..c {
                for dy in 0..p {
                    for dx in 0..p {
                        row[ch * p * p + dy * p + dx] =
                            component.get(ch, r * p + dy, col * p + dx).to_f64();
                    }
                }
            }
        }
    }
    Ok(out)
}

/// For each raster element (channel-major, row-major) the flat index of the
/// same value in the patch matrix produced by [`patchify`].
pub fn unpatchify_map(channels: usize, p: usize, nh: usize, nw: usize) -> Vec<usize> {
    let (h, w) = (nh * p, nw * p);
    let dim = channels * p * p;
    let mut map = Vec::with_capacity(channels * h * w);
    for ch in 0..channels {
        for y in 0..h {
            for x in 0..w {
                let token = (y / p) * nw + x / p;
                map.push(token * dim + ch * p * p + (y % p) * p + x % p);
            }
        }
    }
    map
}

/// Inverse of [`patchify`].
pub fn unpatchify(patches: &Tensor, channels: usize, p: usize, nh: usize, nw: usize) -> Result<Raster<f64>> {
    if patches.shape() != (nh * nw, channels * p * p) {
        return Err(Error::Shape(format!(
            "patch matrix {:?} does not match {nh}x{nw} grid of {channels}x{p}x{p}",
            patches.shape()
        )));
    }
    let data = unpatchify_map(channels, p, nh, nw)
        .into_iter()
        .map(|i| patches.data()[i])
        .collect();
    Raster::from_vec(channels, nh * p, nw * p, data)
}

/// Embeds one component at `level` into `n_H n_W` tokens.
pub fn patch_embed_level<T: Real>(
    component: &Raster<T>,
    level: usize,
    cfg: &PatchConfig,
    emb: &PatchEmbedding,
) -> Result<Tensor> {
    let patches = patchify(component, cfg.patch_size(level))?;
    if patches.rows() != cfg.n_spatial() {
        return Err(Error::Shape(format!(
            "level {level} component gives {} tokens, grid has {}",
            patches.rows(),
            cfg.n_spatial()
        )));
    }
    if emb.weight.rows() != patches.cols() || emb.bias.shape() != (1, emb.weight.cols()) {
        return Err(Error::Shape(format!(
            "embedding {:?} does not accept patches of length {}",
            emb.weight.shape(),
            patches.cols()
        )));
    }
    let mut out = patches.matmul(&emb.weight);
    for i in 0..out.rows() {
        for (o, b) in out.row_mut(i).iter_mut().zip(emb.bias.data()) {
            *o += b;
        }
    }
    Ok(out)
}

/// Embeds the whole component set into the canonical sequence layout.
pub fn build_sequence<T: Real>(
    s: &DecompositionSet<T>,
    cfg: &PatchConfig,
    embs: &PatchEmbeddings,
) -> Result<TokenSequence> {
    if s.depth() != cfg.depth {
        return Err(Error::Config(format!(
            "decomposition depth {} differs from configured {}",
            s.depth(),
            cfg.depth
        )));
    }
    if s.image_shape() != (cfg.channels, cfg.height, cfg.width) {
        return Err(Error::Config(format!(
            "decomposition of {:?} does not match configured image {:?}",
            s.image_shape(),
            (cfg.channels, cfg.height, cfg.width)
        )));
    }
    let dim = embs.ll.weight.cols();
    let mut tokens = Tensor::zeros(cfg.sequence_len(), dim);
    let n = cfg.n_spatial();
    for (k, ((level, comp), band)) in s.iter().enumerate() {
        let t = patch_embed_level(band, level, cfg, embs.for_component(level, comp))?;
        tokens.data_mut()[k * n * dim..(k + 1) * n * dim].copy_from_slice(t.data());
    }
    Ok(TokenSequence {
        tokens,
        tags: sequence_tags(cfg),
        grid: cfg.grid(),
    })
}

/// Sinusoidal table: `pe[pos, 2i] = sin(pos / 10000^(2i/D))`,
/// `pe[pos, 2i+1] = cos(pos / 10000^(2i/D))`.
pub fn ape(num_positions: usize, dim: usize) -> Result<Tensor> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "positional encoding width must be even, got {dim}"
        )));
    }
    let mut out = Tensor::zeros(num_positions, dim);
    for pos in 0..num_positions {
        let row = out.row_mut(pos);
        for i in 0..dim / 2 {
            let freq = 10000f64.powf(-((2 * i) as f64) / dim as f64);
            let a = pos as f64 * freq;
            row[2 * i] = a.sin();
            row[2 * i + 1] = a.cos();
        }
    }
    Ok(out)
}

/// `round(ratio * n)` with exact halves rounded down.
pub fn mask_count(n_spatial: usize, ratio: f64) -> usize {
    let v = ratio * n_spatial as f64;
    (v - 0.5).ceil().max(0.0) as usize
}

/// Spatial positions hidden at every level and component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TubeMask {
    masked: Vec<bool>,
}

impl TubeMask {
    pub fn from_masked(masked: Vec<bool>) -> Self {
        Self { masked }
    }

    /// Nothing masked.
    pub fn none(n_spatial: usize) -> Self {
        Self {
            masked: vec![false; n_spatial],
        }
    }

    /// Uniform subset via a seeded shuffle prefix.
    pub fn sample<R: Rng + ?Sized>(n_spatial: usize, ratio: f64, rng: &mut R) -> Result<Self> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "mask ratio must be in (0, 1), got {ratio}"
            )));
        }
        let k = mask_count(n_spatial, ratio);
        if k == 0 || k == n_spatial {
            return Err(Error::InvalidArgument(format!(
                "mask ratio {ratio} over {n_spatial} positions masks {k}; need 0 < |M| < n"
            )));
        }
        let mut idx: Vec<usize> = (0..n_spatial).collect();
        idx.shuffle(rng);
        let mut masked = vec![false; n_spatial];
        for &i in &idx[..k] {
            masked[i] = true;
        }
        Ok(Self { masked })
    }

    pub fn n_spatial(&self) -> usize {
        self.masked.len()
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.masked[i]
    }

    pub fn masked_count(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        (0..self.masked.len()).filter(|&i| self.masked[i]).collect()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.masked
    }
}

pub fn tube_mask(n_spatial: usize, ratio: f64, seed: u64) -> Result<TubeMask> {
    TubeMask::sample(n_spatial, ratio, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Where each full-sequence slot comes from once the visible tokens have been
/// encoded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RestoreMap {
    /// `slots[i] = Some(k)`: full position `i` is visible row `k`.
    pub slots: Vec<Option<usize>>,
}

impl RestoreMap {
    pub fn full_len(&self) -> usize {
        self.slots.len()
    }

    pub fn visible_len(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    /// Full-sequence positions of the visible rows, in order.
    pub fn visible_positions(&self) -> Vec<usize> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.map(|_| i))
            .collect()
    }

    /// Re-inserts `fill` at every masked slot.
    pub fn restore(&self, visible: &Tensor, fill: &[f64]) -> Result<Tensor> {
        if visible.rows() != self.visible_len() || fill.len() != visible.cols() {
            return Err(Error::Shape(format!(
                "restore of {:?} with {} visible slots and fill of {}",
                visible.shape(),
                self.visible_len(),
                fill.len()
            )));
        }
        let mut out = Tensor::zeros(self.full_len(), visible.cols());
        for (i, s) in self.slots.iter().enumerate() {
            match s {
                Some(k) => out.row_mut(i).copy_from_slice(visible.row(*k)),
                None => out.row_mut(i).copy_from_slice(fill),
            }
        }
        Ok(out)
    }
}

/// Tokens whose spatial index is not masked, at every component.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibleSequence {
    pub tokens: Tensor,
    pub tags: Vec<TokenTag>,
    pub positions: Vec<usize>,
}

pub fn restore_map(grid: (usize, usize), n_components: usize, mask: &TubeMask) -> Result<RestoreMap> {
    let n = grid.0 * grid.1;
    if mask.n_spatial() != n {
        return Err(Error::Shape(format!(
            "mask covers {} positions, grid has {n}",
            mask.n_spatial()
        )));
    }
    let mut slots = Vec::with_capacity(n * n_components);
    let mut k = 0;
    for _ in 0..n_components {
        for s in 0..n {
            if mask.is_masked(s) {
                slots.push(None);
            } else {
                slots.push(Some(k));
                k += 1;
            }
        }
    }
    Ok(RestoreMap { slots })
}

pub fn apply_mask(seq: &TokenSequence, mask: &TubeMask) -> Result<(VisibleSequence, RestoreMap)> {
    let n = seq.n_spatial();
    if n == 0 || seq.len() % n != 0 {
        return Err(Error::Shape("sequence length is not a multiple of the grid".into()));
    }
    let map = restore_map(seq.grid, seq.len() / n, mask)?;
    let positions = map.visible_positions();
    let mut tokens = Tensor::zeros(positions.len(), seq.tokens.cols());
    for (k, &p) in positions.iter().enumerate() {
        tokens.row_mut(k).copy_from_slice(seq.tokens.row(p));
    }
    let tags = positions.iter().map(|&p| seq.tags[p]).collect();
    Ok((
        VisibleSequence {
            tokens,
            tags,
            positions,
        },
        map,
    ))
}
