//! Encoder, multi-level decoder and loss graph on the autodiff tape.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Function, Gradients, NodeId, Tape};
use crate::error::{Error, Result};
use crate::geo::{sh_of_coord, GeoCoord};
use crate::raster::{Raster, Real};
use crate::tensor::Tensor;
use crate::tokenizer::{ape, patchify, restore_map, unpatchify_map, PatchConfig, RestoreMap, TubeMask};
use crate::wavelet::{component_order, dwt_multi, idwt_multi, Component, DecompositionSet, DetailBands, WaveletFilter};

use super::config::ModelConfig;
use super::loss::{component_mask, flatten_components, pixel_mask, LossKind, LossTerms, MaskedLoss};
use super::params::{init_params, pred_prefix, ParamStore};

/// Lazily creates one tape leaf per parameter actually used by a graph.
pub struct Binder<'a> {
    params: &'a ParamStore,
    nodes: Vec<Option<NodeId>>,
}

impl<'a> Binder<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Self {
            params,
            nodes: vec![None; params.len()],
        }
    }

    pub fn get(&mut self, tape: &mut Tape, name: &str) -> Result<NodeId> {
        let id = self.params.id(name)?;
        if let Some(n) = self.nodes[id] {
            return Ok(n);
        }
        let n = tape.leaf(self.params.by_id(id).value.clone());
        self.nodes[id] = Some(n);
        Ok(n)
    }

    /// Gradient per parameter, zero for the ones the graph never touched.
    pub fn collect(&self, grads: &mut Gradients) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(self.nodes.len());
        for (id, node) in self.nodes.iter().enumerate() {
            let p = self.params.by_id(id);
            let g = node
                .and_then(|n| grads.take(n))
                .unwrap_or_else(|| Tensor::zeros(p.value.rows(), p.value.cols()));
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", p.name)));
            }
            out.push(g);
        }
        Ok(out)
    }
}

/// Encoder activations: the output of every block and the final normalized
/// sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub layers: Vec<Tensor>,
    pub latent: Tensor,
}

pub struct EncoderNodes {
    pub layers: Vec<NodeId>,
    pub latent: NodeId,
}

/// Every node of a recorded training graph.
pub struct Recorded {
    pub restore: RestoreMap,
    pub tokens: NodeId,
    pub encoder: EncoderNodes,
    pub components: Vec<NodeId>,
    pub recon: NodeId,
    pub l_rec: NodeId,
    pub l_cmp: NodeId,
    pub l_tot: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub terms: LossTerms,
    pub prediction: DecompositionSet<f64>,
    pub recon: Raster<f64>,
    pub latent: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    enc_ape: Tensor,
    dec_ape: Tensor,
}

/// Inverse wavelet transform over flattened component rows. Its adjoint is the
/// forward transform because the Haar filter bank is orthonormal.
struct IdwtOp {
    cfg: PatchConfig,
}

impl Function for IdwtOp {
    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let c = &self.cfg;
        let g = Raster::from_vec(c.channels, c.height, c.width, grad.data().to_vec()).expect("image gradient shape");
        let s = dwt_multi(&g, c.depth, &WaveletFilter::haar()).expect("valid decomposition");
        s.iter()
            .map(|(_, r)| Some(Tensor::row_vector(r.data().to_vec())))
            .collect()
    }
}

/// Builds a component set from flattened rows in component order.
pub fn assemble_components(cfg: &PatchConfig, rows: &[&Tensor]) -> Result<DecompositionSet<f64>> {
    let order = component_order(cfg.depth);
    if rows.len() != order.len() {
        return Err(Error::Shape(format!(
            "{} component rows for {} components",
            rows.len(),
            order.len()
        )));
    }
    let band = |k: usize, level: usize| {
        Raster::from_vec(cfg.channels, cfg.height >> level, cfg.width >> level, rows[k].data().to_vec())
    };
    let mut details = Vec::with_capacity(cfg.depth);
    for level in 1..=cfg.depth {
        let k = 3 * (level - 1);
        details.push(DetailBands {
            lh: band(k, level)?,
            hl: band(k + 1, level)?,
            hh: band(k + 2, level)?,
        });
    }
    let ll = band(order.len() - 1, cfg.depth)?;
    Ok(DecompositionSet { details, ll })
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_params(&config, &mut rng);
        Self::from_params(config, params)
    }

    /// Wraps an existing parameter set after checking it against `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let reference = init_params(&config, &mut rng);
        if reference.len() != params.len() {
            return Err(Error::Config(format!(
                "configuration needs {} parameter tensors, got {}",
                reference.len(),
                params.len()
            )));
        }
        for (r, p) in reference.iter().zip(params.iter()) {
            if r.name != p.name || r.value.shape() != p.value.shape() {
                return Err(Error::Config(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    p.name,
                    p.value.shape(),
                    r.name,
                    r.value.shape()
                )));
            }
        }
        let pc = config.patch_config();
        let enc_ape = ape(pc.sequence_len(), config.encoder.dim)?;
        let dec_ape = ape(pc.sequence_len(), config.decoder.dim)?;
        Ok(Self {
            config,
            params,
            enc_ape,
            dec_ape,
        })
    }

    pub fn patch_config(&self) -> PatchConfig {
        self.config.patch_config()
    }

    fn linear(&self, tape: &mut Tape, b: &mut Binder, name: &str, x: NodeId) -> Result<NodeId> {
        let w = b.get(tape, &format!("{name}.weight"))?;
        let bias = b.get(tape, &format!("{name}.bias"))?;
        tape.linear(x, w, bias)
    }

    fn norm(&self, tape: &mut Tape, b: &mut Binder, name: &str, x: NodeId) -> Result<NodeId> {
        let g = b.get(tape, &format!("{name}.weight"))?;
        let beta = b.get(tape, &format!("{name}.bias"))?;
        tape.layer_norm(x, g, beta, self.config.layer_norm_eps)
    }

    /// Pre-norm transformer block.
    fn block(&self, tape: &mut Tape, b: &mut Binder, prefix: &str, x: NodeId, heads: usize) -> Result<NodeId> {
        let dim = tape.value(x).cols();
        let dh = dim / heads;
        let h = self.norm(tape, b, &format!("{prefix}.norm1"), x)?;
        let qkv = self.linear(tape, b, &format!("{prefix}.attn.qkv"), h)?;
        let mut outs = Vec::with_capacity(heads);
        for i in 0..heads {
            let q = tape.slice_cols(qkv, i * dh, dh)?;
            let k = tape.slice_cols(qkv, dim + i * dh, dh)?;
            let v = tape.slice_cols(qkv, 2 * dim + i * dh, dh)?;
            let scores = tape.matmul_nt(q, k)?;
            let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
            let attn = tape.softmax_rows(scores);
            outs.push(tape.matmul(attn, v)?);
        }
        let merged = tape.concat_cols(&outs)?;
        let a = self.linear(tape, b, &format!("{prefix}.attn.proj"), merged)?;
        let x = tape.add(x, a)?;
        let h = self.norm(tape, b, &format!("{prefix}.norm2"), x)?;
        let h = self.linear(tape, b, &format!("{prefix}.mlp.fc1"), h)?;
        let h = tape.gelu(h);
        let h = self.linear(tape, b, &format!("{prefix}.mlp.fc2"), h)?;
        tape.add(x, h)
    }

    /// Patch-embeds the visible tubes of every component, in restore-map order.
    pub fn embed_on(
        &self,
        tape: &mut Tape,
        b: &mut Binder,
        s: &DecompositionSet<f64>,
        mask: &TubeMask,
    ) -> Result<(NodeId, RestoreMap)> {
        let pc = self.patch_config();
        pc.validate()?;
        if s.depth() != pc.depth || s.image_shape() != (pc.channels, pc.height, pc.width) {
            return Err(Error::Config(format!(
                "{}-level decomposition of {:?} does not match the model",
                s.depth(),
                s.image_shape()
            )));
        }
        let restore = restore_map(pc.grid(), pc.n_components(), mask)?;
        let visible: Vec<usize> = (0..pc.n_spatial()).filter(|&i| !mask.is_masked(i)).collect();
        if visible.is_empty() {
            return Err(Error::InvalidArgument("every tube is masked".into()));
        }
        let mut parts = Vec::with_capacity(pc.n_components());
        for ((level, comp), band) in s.iter() {
            let patches = patchify(band, pc.patch_size(level))?;
            let mut rows = Tensor::zeros(visible.len(), patches.cols());
            for (k, &i) in visible.iter().enumerate() {
                rows.row_mut(k).copy_from_slice(patches.row(i));
            }
            let leaf = tape.leaf(rows);
            let name = if comp == Component::LL {
                "patch_embed.ll".to_string()
            } else {
                format!("patch_embed.level{level}")
            };
            parts.push(self.linear(tape, b, &name, leaf)?);
        }
        let picks = (0..parts.len())
            .flat_map(|k| (0..visible.len()).map(move |r| (k, r)))
            .collect();
        Ok((tape.gather_rows(&parts, picks)?, restore))
    }

    /// Learned projection of the coordinate's spherical-harmonics vector.
    pub fn gpe_on(&self, tape: &mut Tape, b: &mut Binder, coord: GeoCoord) -> Result<NodeId> {
        let sh = sh_of_coord(coord, self.config.sh_cutoff)?;
        let leaf = tape.leaf(Tensor::row_vector(sh.coeffs().to_vec()));
        self.linear(tape, b, "gpe", leaf)
    }

    /// Adds positional encodings (and the optional geo encoding) to the
    /// visible tokens and runs the encoder stack.
    pub fn encode_on(
        &self,
        tape: &mut Tape,
        b: &mut Binder,
        tokens: NodeId,
        positions: &[usize],
        gpe: Option<NodeId>,
    ) -> Result<EncoderNodes> {
        let (rows, cols) = tape.value(tokens).shape();
        if cols != self.config.encoder.dim || rows != positions.len() {
            return Err(Error::Shape(format!(
                "encoder expects {} tokens of width {}, got {rows}x{cols}",
                positions.len(),
                self.config.encoder.dim
            )));
        }
        let mut table = Tensor::zeros(rows, cols);
        for (k, &p) in positions.iter().enumerate() {
            if p >= self.enc_ape.rows() {
                return Err(Error::Shape(format!("position {p} beyond the sequence")));
            }
            table.row_mut(k).copy_from_slice(self.enc_ape.row(p));
        }
        let table = tape.leaf(table);
        let mut x = tape.add(tokens, table)?;
        if let Some(g) = gpe {
            x = tape.add_row(x, g)?;
        }
        let mut layers = Vec::with_capacity(self.config.encoder.depth);
        for i in 0..self.config.encoder.depth {
            x = self.block(tape, b, &format!("encoder.blocks.{i}"), x, self.config.encoder.heads)?;
            layers.push(x);
        }
        let latent = self.norm(tape, b, "encoder.norm", x)?;
        Ok(EncoderNodes { layers, latent })
    }

    /// Predicts every component as a flattened `1 x (C h w)` row.
    pub fn decode_on(&self, tape: &mut Tape, b: &mut Binder, latent: NodeId, restore: &RestoreMap) -> Result<Vec<NodeId>> {
        let pc = self.patch_config();
        let n = pc.n_spatial();
        let (rows, cols) = tape.value(latent).shape();
        if restore.full_len() != pc.sequence_len() || restore.visible_len() != rows || cols != self.config.encoder.dim {
            return Err(Error::Shape(format!(
                "latent {rows}x{cols} inconsistent with restore map of {} / {} slots",
                restore.visible_len(),
                restore.full_len()
            )));
        }
        let emb = self.linear(tape, b, "decoder.embed", latent)?;
        let mask_token = b.get(tape, "decoder.mask_token")?;
        let picks = restore
            .slots
            .iter()
            .map(|s| match s {
                Some(k) => (0, *k),
                None => (1, 0),
            })
            .collect();
        let full = tape.gather_rows(&[emb, mask_token], picks)?;
        let table = tape.leaf(self.dec_ape.clone());
        let mut x = tape.add(full, table)?;
        for i in 0..self.config.decoder.depth {
            x = self.block(tape, b, &format!("decoder.blocks.{i}"), x, self.config.decoder.heads)?;
        }
        let x = self.norm(tape, b, "decoder.norm", x)?;
        let (nh, nw) = pc.grid();
        let mut out = Vec::with_capacity(pc.n_components());
        for (k, (level, comp)) in component_order(pc.depth).into_iter().enumerate() {
            let prefix = pred_prefix(level, comp);
            let t = tape.slice_rows(x, k * n, n)?;
            let h = self.linear(tape, b, &format!("{prefix}.fc1"), t)?;
            let h = tape.gelu(h);
            let h = self.linear(tape, b, &format!("{prefix}.fc2"), h)?;
            let p = pc.patch_size(level);
            let map = unpatchify_map(pc.channels, p, nh, nw);
            let len = map.len();
            out.push(tape.permute(h, 1, len, map)?);
        }
        Ok(out)
    }

    /// Inverse transform of predicted components as a `1 x (C H W)` row.
    pub fn idwt_on(&self, tape: &mut Tape, components: &[NodeId]) -> Result<NodeId> {
        let pc = self.patch_config();
        let rows: Vec<&Tensor> = components.iter().map(|&c| tape.value(c)).collect();
        let s = assemble_components(&pc, &rows)?;
        let x = idwt_multi(&s, &WaveletFilter::haar())?;
        let value = Tensor::row_vector(x.into_data());
        Ok(tape.custom(components.to_vec(), value, Box::new(IdwtOp { cfg: pc })))
    }

    fn geo_of<T: Real>(&self, x: &Raster<T>) -> Option<GeoCoord> {
        if self.config.use_gpe {
            x.geo.as_ref().map(|g| g.coord)
        } else {
            None
        }
    }

    fn check_image<T: Real>(&self, x: &Raster<T>) -> Result<()> {
        let c = &self.config;
        if x.shape() != (c.channels, c.height, c.width) {
            return Err(Error::Config(format!(
                "image {:?} does not match model input {:?}",
                x.shape(),
                (c.channels, c.height, c.width)
            )));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("input image".into()));
        }
        Ok(())
    }

    /// Records the whole training graph for one image.
    pub fn record<T: Real>(&self, tape: &mut Tape, b: &mut Binder, x: &Raster<T>, mask: &TubeMask) -> Result<Recorded> {
        self.check_image(x)?;
        let pc = self.patch_config();
        let x64: Raster<f64> = x.cast();
        let s = dwt_multi(&x64, pc.depth, &WaveletFilter::haar())?;
        let (tokens, restore) = self.embed_on(tape, b, &s, mask)?;
        let gpe = match self.geo_of(x) {
            Some(c) => Some(self.gpe_on(tape, b, c)?),
            None => None,
        };
        let encoder = self.encode_on(tape, b, tokens, &restore.visible_positions(), gpe)?;
        let components = self.decode_on(tape, b, encoder.latent, &restore)?;
        let recon = self.idwt_on(tape, &components)?;

        let (op, v) = MaskedLoss::new(LossKind::Mse, tape.value(recon), x64.data().to_vec(), pixel_mask(&pc, mask))?;
        let l_rec = tape.custom(vec![recon], v, Box::new(op));
        let flat = tape.concat_cols(&components)?;
        let beta = self.config.smooth_l1_beta;
        let (op, v) = MaskedLoss::new(
            LossKind::SmoothL1 { beta },
            tape.value(flat),
            flatten_components(&s),
            component_mask(&pc, mask),
        )?;
        let l_cmp = tape.custom(vec![flat], v, Box::new(op));
        let l_tot = tape.add(l_rec, l_cmp)?;
        Ok(Recorded {
            restore,
            tokens,
            encoder,
            components,
            recon,
            l_rec,
            l_cmp,
            l_tot,
        })
    }

    fn output(&self, tape: &Tape, r: &Recorded) -> Result<ForwardOutput> {
        let pc = self.patch_config();
        let rows: Vec<&Tensor> = r.components.iter().map(|&c| tape.value(c)).collect();
        let prediction = assemble_components(&pc, &rows)?;
        let recon = Raster::from_vec(pc.channels, pc.height, pc.width, tape.value(r.recon).data().to_vec())?;
        Ok(ForwardOutput {
            terms: LossTerms {
                rec: tape.value(r.l_rec).item(),
                cmp: tape.value(r.l_cmp).item(),
            },
            prediction,
            recon,
            latent: tape.value(r.encoder.latent).clone(),
        })
    }

    /// Masked forward pass without gradients.
    pub fn forward<T: Real>(&self, x: &Raster<T>, mask: &TubeMask) -> Result<ForwardOutput> {
        let mut tape = Tape::new();
        let mut b = Binder::new(&self.params);
        let r = self.record(&mut tape, &mut b, x, mask)?;
        self.output(&tape, &r)
    }

    /// Loss terms and the gradient of `L_tot` for every parameter, in
    /// registration order.
    pub fn loss_and_grads<T: Real>(&self, x: &Raster<T>, mask: &TubeMask) -> Result<(ForwardOutput, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let mut b = Binder::new(&self.params);
        let r = self.record(&mut tape, &mut b, x, mask)?;
        let out = self.output(&tape, &r)?;
        if !out.terms.total().is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads = tape.backward(r.l_tot)?;
        Ok((out, b.collect(&mut grads)?))
    }

    /// Visible tokens before any positional encoding, plus the restore map.
    pub fn embed<T: Real>(&self, x: &Raster<T>, mask: &TubeMask) -> Result<(Tensor, RestoreMap)> {
        self.check_image(x)?;
        let s = dwt_multi(&x.cast::<f64>(), self.config.levels, &WaveletFilter::haar())?;
        let mut tape = Tape::new();
        let mut b = Binder::new(&self.params);
        let (t, restore) = self.embed_on(&mut tape, &mut b, &s, mask)?;
        Ok((tape.value(t).clone(), restore))
    }

    pub fn gpe_vector(&self, coord: GeoCoord) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut b = Binder::new(&self.params);
        let g = self.gpe_on(&mut tape, &mut b, coord)?;
        Ok(tape.value(g).clone())
    }

    /// Encoder over already-embedded tokens at the given full-sequence
    /// positions. `gpe`, when given, is a `1 x D` row added to every token.
    pub fn encode(&self, tokens: &Tensor, positions: &[usize], gpe: Option<&Tensor>) -> Result<EncoderOutput> {
        let mut tape = Tape::new();
        let mut b = Binder::new(&self.params);
        let t = tape.leaf(tokens.clone());
        let g = gpe.map(|g| tape.leaf(g.clone()));
        let e = self.encode_on(&mut tape, &mut b, t, positions, g)?;
        Ok(EncoderOutput {
            layers: e.layers.iter().map(|&l| tape.value(l).clone()).collect(),
            latent: tape.value(e.latent).clone(),
        })
    }

    /// Encoder over an image: embedding, encodings (geo only when the image
    /// carries coordinates and the model uses them) and the block stack.
    pub fn encode_image<T: Real>(&self, x: &Raster<T>, mask: &TubeMask) -> Result<EncoderOutput> {
        let (tokens, restore) = self.embed(x, mask)?;
        let gpe = match self.geo_of(x) {
            Some(c) => Some(self.gpe_vector(c)?),
            None => None,
        };
        self.encode(&tokens, &restore.visible_positions(), gpe.as_ref())
    }

    pub fn decode(&self, latent: &Tensor, restore: &RestoreMap) -> Result<DecompositionSet<f64>> {
        let mut tape = Tape::new();
        let mut b = Binder::new(&self.params);
        let l = tape.leaf(latent.clone());
        let comps = self.decode_on(&mut tape, &mut b, l, restore)?;
        let rows: Vec<&Tensor> = comps.iter().map(|&c| tape.value(c)).collect();
        assemble_components(&self.patch_config(), &rows)
    }
}
