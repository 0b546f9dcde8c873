//! Image-embedding distances for anchor / positive / negative tuples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::pairs::{cosine, CLOSE_KM};
use crate::error::{Error, Result};
use crate::geo::{haversine, GeoCoord};
use crate::model::Model;
use crate::raster::Raster;
use crate::tokenizer::TubeMask;
use crate::training::synth::{near, synth_image, uniform_coord, SynthSpec, CATEGORIES};

/// Five geo-tagged images. Positives are within 200 km of the anchor,
/// negatives beyond; the plain positive and the easy negative differ from the
/// anchor's category, the easy positive and the plain negative share it.
#[derive(Debug, Clone, PartialEq)]
pub struct TupleSample {
    pub anchor: Raster<f32>,
    pub positive: Raster<f32>,
    pub easy_positive: Raster<f32>,
    pub negative: Raster<f32>,
    pub easy_negative: Raster<f32>,
}

fn meta(x: &Raster<f32>, role: &str) -> Result<(GeoCoord, String)> {
    let g = x
        .geo
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("{role} has no coordinates")))?;
    let c = g
        .category
        .clone()
        .ok_or_else(|| Error::InvalidArgument(format!("{role} has no category")))?;
    Ok((g.coord, c))
}

impl TupleSample {
    pub fn validate(&self) -> Result<()> {
        let (a, ca) = meta(&self.anchor, "anchor")?;
        let checks = [
            (&self.positive, "positive", true, false),
            (&self.easy_positive, "easy positive", true, true),
            (&self.negative, "negative", false, true),
            (&self.easy_negative, "easy negative", false, false),
        ];
        for (x, role, close, same) in checks {
            if x.shape() != self.anchor.shape() {
                return Err(Error::InvalidArgument(format!("{role} shape differs from anchor")));
            }
            let (p, c) = meta(x, role)?;
            let d = haversine(a, p);
            if (d < CLOSE_KM) != close || (c == ca) != same {
                return Err(Error::InvalidArgument(format!(
                    "{role} at {d:.1} km with category {c} violates the tuple rules (anchor category {ca})"
                )));
            }
        }
        Ok(())
    }
}

/// Synthetic tuples drawn with the image generator of `spec`.
pub fn make_tuples(spec: &SynthSpec, count: usize, seed: u64) -> Result<Vec<TupleSample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = CATEGORIES.len();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let a = uniform_coord(&mut rng);
        let ca = rng.gen_range(0..k);
        let other = (ca + rng.gen_range(1..k)) % k;
        let far = |rng: &mut ChaCha8Rng| loop {
            let p = uniform_coord(rng);
            if haversine(a, p) >= CLOSE_KM {
                break p;
            }
        };
        let pp = near(&mut rng, a, 150.0);
        let ep = near(&mut rng, a, 150.0);
        let n = far(&mut rng);
        let en = far(&mut rng);
        let other2 = (ca + rng.gen_range(1..k)) % k;
        let t = TupleSample {
            anchor: synth_image(spec, a, ca, &mut rng),
            positive: synth_image(spec, pp, other, &mut rng),
            easy_positive: synth_image(spec, ep, ca, &mut rng),
            negative: synth_image(spec, n, ca, &mut rng),
            easy_negative: synth_image(spec, en, other2, &mut rng),
        };
        t.validate()?;
        out.push(t);
    }
    Ok(out)
}

/// Mean of the encoder output tokens over the unmasked image.
pub fn embed_image(model: &Model, x: &Raster<f32>) -> Result<Vec<f64>> {
    let n = model.patch_config().n_spatial();
    let out = model.encode_image(x, &TubeMask::none(n))?;
    let t = &out.latent;
    let mut mean = vec![0.0; t.cols()];
    for r in 0..t.rows() {
        for (m, v) in mean.iter_mut().zip(t.row(r)) {
            *m += v;
        }
    }
    let inv = 1.0 / t.rows() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    Ok(mean)
}

/// `1 - cosine similarity`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - cosine(a, b)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TupleDistances {
    pub ap: f64,
    pub an: f64,
    pub aep: f64,
    pub aen: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuplesReport {
    pub n: usize,
    pub mean: TupleDistances,
    /// `mean.an - mean.ap`.
    pub margin: f64,
    #[serde(skip)]
    pub per_tuple: Vec<TupleDistances>,
}

impl TuplesReport {
    /// Per-tuple `d(A, N) - d(A, P)`.
    pub fn margins(&self) -> Vec<f64> {
        self.per_tuple.iter().map(|d| d.an - d.ap).collect()
    }
}

pub fn gpe_embeddings_eval(model: &Model, tuples: &[TupleSample]) -> Result<TuplesReport> {
    if tuples.is_empty() {
        return Err(Error::InvalidArgument("no tuples".into()));
    }
    let mut per_tuple = Vec::with_capacity(tuples.len());
    for t in tuples {
        t.validate()?;
        let a = embed_image(model, &t.anchor)?;
        let d = |x: &Raster<f32>| -> Result<f64> { Ok(cosine_distance(&a, &embed_image(model, x)?)) };
        per_tuple.push(TupleDistances {
            ap: d(&t.positive)?,
            an: d(&t.negative)?,
            aep: d(&t.easy_positive)?,
            aen: d(&t.easy_negative)?,
        });
    }
    let n = per_tuple.len() as f64;
    let avg = |f: fn(&TupleDistances) -> f64| per_tuple.iter().map(f).sum::<f64>() / n;
    let mean = TupleDistances {
        ap: avg(|d| d.ap),
        an: avg(|d| d.an),
        aep: avg(|d| d.aep),
        aen: avg(|d| d.aen),
    };
    Ok(TuplesReport {
        n: per_tuple.len(),
        margin: mean.an - mean.ap,
        mean,
        per_tuple,
    })
}

/// Two-sided sign-flip permutation p-value for "the mean of `xs` is 0".
pub fn sign_flip_p_value(xs: &[f64], permutations: usize, seed: u64) -> f64 {
    let n = xs.len() as f64;
    let observed = (xs.iter().sum::<f64>() / n).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0;
    for _ in 0..permutations {
        let m: f64 = xs
            .iter()
            .map(|&x| if rng.gen::<bool>() { x } else { -x })
            .sum::<f64>()
            / n;
        if m.abs() >= observed {
            hits += 1;
        }
    }
    (hits + 1) as f64 / (permutations + 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn spec() -> SynthSpec {
        let mut s = SynthSpec::new(1, 2, 32, 32, 0);
        s.levels = 3;
        s
    }

    #[test]
    fn generated_tuples_are_valid() {
        let t = make_tuples(&spec(), 20, 1).unwrap();
        assert_eq!(t.len(), 20);
        let mut bad = t[0].clone();
        bad.negative = bad.positive.clone();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn anchor_as_positive_has_zero_distance() {
        let model = Model::new(ModelConfig::tiny(2, 32, 32), 1).unwrap();
        let t = make_tuples(&spec(), 1, 2).unwrap();
        let a = embed_image(&model, &t[0].anchor).unwrap();
        assert_eq!(cosine_distance(&a, &a.clone()), 0.0);
    }

    #[test]
    fn sign_flip_detects_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let centred: Vec<f64> = (0..500).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let shifted: Vec<f64> = centred.iter().map(|x| x + 0.3).collect();
        assert!(sign_flip_p_value(&centred, 2000, 1) > 0.01);
        assert!(sign_flip_p_value(&shifted, 2000, 1) < 0.01);
    }
}
