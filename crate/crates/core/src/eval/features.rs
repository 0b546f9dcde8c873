//! Dense feature maps from intermediate encoder layers.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::raster::{Raster, Real};
use crate::tensor::Tensor;
use crate::tokenizer::TubeMask;

/// `dim x fh x fw`, channel-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureMap {
    pub dim: usize,
    pub fh: usize,
    pub fw: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.fh + y) * self.fw + x]
    }

    pub fn to_raster(&self) -> Raster<f32> {
        Raster::from_vec(self.dim, self.fh, self.fw, self.data.iter().map(|&v| v as f32).collect())
            .expect("feature map shape")
    }
}

/// Per-row layer normalization without affine parameters.
pub fn normalize_rows(t: &Tensor, eps: f64) -> Tensor {
    let (n, d) = t.shape();
    let mut out = Tensor::zeros(n, d);
    for i in 0..n {
        let row = t.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + eps).sqrt();
        for (o, v) in out.row_mut(i).iter_mut().zip(row) {
            *o = (v - mean) * is;
        }
    }
    out
}

fn block(t: &Tensor, k: usize, n: usize) -> Tensor {
    let d = t.cols();
    Tensor::from_vec(n, d, t.data()[k * n * d..(k + 1) * n * d].to_vec()).expect("block shape")
}

/// Aggregates one layer's full token sequence (component-major, deepest
/// approximation last) into `n x D`: the normalized approximation tokens plus
/// the normalized sum of the normalized detail tokens, normalized again.
/// Detail contributions are added in sorted order, so the result does not
/// depend on the order of the detail components.
pub fn aggregate_layer(tokens: &Tensor, n_spatial: usize, eps: f64) -> Result<Tensor> {
    let (rows, d) = tokens.shape();
    if n_spatial == 0 || rows % n_spatial != 0 || rows / n_spatial < 2 {
        return Err(Error::Shape(format!(
            "{rows} tokens do not form at least two components of {n_spatial}"
        )));
    }
    let k = rows / n_spatial;
    let ll = normalize_rows(&block(tokens, k - 1, n_spatial), eps);
    let hf: Vec<Tensor> = (0..k - 1)
        .map(|c| normalize_rows(&block(tokens, c, n_spatial), eps))
        .collect();
    let mut sum = Tensor::zeros(n_spatial, d);
    let mut vals = Vec::with_capacity(k - 1);
    for (i, s) in sum.data_mut().iter_mut().enumerate() {
        vals.clear();
        vals.extend(hf.iter().map(|t| t.data()[i]));
        vals.sort_by(f64::total_cmp);
        *s = vals.iter().sum();
    }
    let mut fused = normalize_rows(&sum, eps);
    fused.add_assign(&ll);
    Ok(normalize_rows(&fused, eps))
}

/// Feature map of an unmasked image from the given encoder blocks (0-based),
/// one aggregated map per block, summed.
pub fn extract_features_at<T: Real>(model: &Model, x: &Raster<T>, layers: &[usize]) -> Result<FeatureMap> {
    let depth = model.config.encoder.depth;
    if layers.is_empty() {
        return Err(Error::InvalidArgument("no feature layers requested".into()));
    }
    if let Some(&l) = layers.iter().find(|&&l| l >= depth) {
        return Err(Error::Config(format!("layer {l} requested from a {depth}-block encoder")));
    }
    let pc = model.patch_config();
    let n = pc.n_spatial();
    let (fh, fw) = pc.grid();
    let out = model.encode_image(x, &TubeMask::none(n))?;
    let dim = model.config.encoder.dim;
    let eps = model.config.layer_norm_eps;
    let mut acc = Tensor::zeros(n, dim);
    for &l in layers {
        acc.add_assign(&aggregate_layer(&out.layers[l], n, eps)?);
    }
    let t = acc.transpose();
    Ok(FeatureMap {
        dim,
        fh,
        fw,
        data: t.into_data(),
    })
}

/// [`extract_features_at`] with the configured layer subset.
pub fn extract_features<T: Real>(model: &Model, x: &Raster<T>) -> Result<FeatureMap> {
    extract_features_at(model, x, &model.config.feature_layers())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EncoderConfig, ModelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn grid_for_224() {
        let mut cfg = ModelConfig::preset(crate::model::ModelSize::Small, 1, 224, 224);
        cfg.encoder = EncoderConfig {
            depth: 6,
            dim: 16,
            heads: 2,
            mlp_dim: 16,
        };
        cfg.decoder.depth = 1;
        cfg.sh_cutoff = 2;
        let model = Model::new(cfg, 0).unwrap();
        let x = Raster::<f32>::filled(1, 224, 224, 0.5);
        let f = extract_features(&model, &x).unwrap();
        assert_eq!((f.dim, f.fh, f.fw), (16, 14, 14));
        assert_eq!(model.config.feature_layers(), vec![1, 2, 3, 5]);
    }

    #[test]
    fn detail_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 9;
        let blocks: Vec<Tensor> = (0..7).map(|_| random_tensor(&mut rng, n, 8)).collect();
        let stack = |order: &[usize]| {
            let data = order.iter().flat_map(|&k| blocks[k].data().to_vec()).collect();
            Tensor::from_vec(7 * n, 8, data).unwrap()
        };
        let a = aggregate_layer(&stack(&[0, 1, 2, 3, 4, 5, 6]), n, 1e-6).unwrap();
        let b = aggregate_layer(&stack(&[2, 0, 1, 5, 3, 4, 6]), n, 1e-6).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_tokens_give_constant_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 6;
        let mut t = Tensor::zeros(4 * n, 8);
        for k in 0..4 {
            let row: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for i in 0..n {
                t.row_mut(k * n + i).copy_from_slice(&row);
            }
        }
        let out = aggregate_layer(&t, n, 1e-6).unwrap();
        for i in 1..n {
            assert_eq!(out.row(i), out.row(0));
        }
    }

    #[test]
    fn finite_and_bounded() {
        let cfg = ModelConfig::tiny(2, 32, 32);
        let model = Model::new(cfg, 3).unwrap();
        let layers = model.config.feature_layers();
        for s in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let x = Raster::<f32>::from_fn(2, 32, 32, |_, _, _| rng.gen_range(-3.0..3.0));
            let f = extract_features(&model, &x).unwrap();
            assert!(f.data.iter().all(|v| v.is_finite()));
            for y in 0..f.fh {
                for xx in 0..f.fw {
                    let norm: f64 = (0..f.dim).map(|c| f.get(c, y, xx).powi(2)).sum::<f64>().sqrt();
                    assert!(norm <= layers.len() as f64 * (f.dim as f64).sqrt() + 1e-9);
                }
            }
        }
        assert!(matches!(
            extract_features_at(&model, &Raster::<f32>::zeros(2, 32, 32), &[2]),
            Err(Error::Config(_))
        ));
    }
}
