//! Similarity of geo encodings against great-circle distance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geo::{haversine, sh_of_coord, spearman, GeoCoord};
use crate::model::Model;
use crate::training::synth::{near, uniform_coord};

/// Pairs closer than this are "close".
pub const CLOSE_KM: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Close,
    Far,
}

impl Bucket {
    pub fn of(distance_km: f64) -> Self {
        if distance_km < CLOSE_KM {
            Bucket::Close
        } else {
            Bucket::Far
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairSample {
    pub p1: GeoCoord,
    pub p2: GeoCoord,
    pub distance_km: f64,
    pub bucket: Bucket,
}

impl PairSample {
    pub fn new(p1: GeoCoord, p2: GeoCoord) -> Self {
        let distance_km = haversine(p1, p2);
        Self {
            p1,
            p2,
            distance_km,
            bucket: Bucket::of(distance_km),
        }
    }
}

/// `n` pairs, half close and half far. Every location is uniform on the
/// sphere; close partners are drawn inside a 195 km disc and far partners
/// are redrawn until they lie beyond the threshold.
pub fn sample_pairs(n: usize, seed: u64) -> Vec<PairSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let p1 = uniform_coord(&mut rng);
        let pair = if i % 2 == 0 {
            PairSample::new(p1, near(&mut rng, p1, CLOSE_KM - 5.0))
        } else {
            loop {
                let p = PairSample::new(p1, uniform_coord(&mut rng));
                if p.bucket == Bucket::Far {
                    break p;
                }
            }
        };
        out.push(pair);
    }
    out
}

/// Which vector represents a coordinate.
#[derive(Debug, Clone, Copy)]
pub enum GpeSource<'a> {
    /// The spherical-harmonics vector itself, at the given cutoff.
    Raw { cutoff: usize },
    /// The model's learned projection.
    Projected(&'a Model),
}

impl GpeSource<'_> {
    pub fn vector(&self, c: GeoCoord) -> Result<Vec<f64>> {
        match self {
            GpeSource::Raw { cutoff } => Ok(sh_of_coord(c, *cutoff)?.coeffs().to_vec()),
            GpeSource::Projected(m) => Ok(m.gpe_vector(c)?.into_data()),
        }
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let saa: f64 = a.iter().map(|x| x * x).sum();
    let sbb: f64 = b.iter().map(|x| x * x).sum();
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    // sqrt(s * s) == s exactly, so identical inputs give exactly 1
    (dot / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    /// Sample mean and (n - 1)-normalized standard deviation.
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN, n };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairsReport {
    pub close: MeanStd,
    pub far: MeanStd,
    pub spearman: f64,
    #[serde(skip)]
    pub similarities: Vec<f64>,
}

pub fn gpe_pairs_eval(src: GpeSource, pairs: &[PairSample]) -> Result<PairsReport> {
    if pairs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "pairs evaluation needs at least 2 pairs, got {}",
            pairs.len()
        )));
    }
    let mut sims = Vec::with_capacity(pairs.len());
    let (mut close, mut far) = (Vec::new(), Vec::new());
    for p in pairs {
        let s = cosine(&src.vector(p.p1)?, &src.vector(p.p2)?);
        match p.bucket {
            Bucket::Close => close.push(s),
            Bucket::Far => far.push(s),
        }
        sims.push(s);
    }
    let dist: Vec<f64> = pairs.iter().map(|p| p.distance_km).collect();
    Ok(PairsReport {
        close: MeanStd::of(&close),
        far: MeanStd::of(&far),
        spearman: spearman(&sims, &dist)?,
        similarities: sims,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{sh_vector, to_spherical, ShVector};

    #[test]
    fn buckets_match_distances() {
        let pairs = sample_pairs(400, 3);
        let close = pairs.iter().filter(|p| p.bucket == Bucket::Close).count();
        assert_eq!(close, 200);
        for p in &pairs {
            assert_eq!(Bucket::of(haversine(p.p1, p.p2)), p.bucket);
        }
    }

    #[test]
    fn raw_similarity_tracks_distance() {
        let pairs = sample_pairs(600, 1);
        let r = gpe_pairs_eval(GpeSource::Raw { cutoff: 27 }, &pairs).unwrap();
        assert!(r.spearman < -0.5, "{r:?}");
        assert!(r.close.mean > r.far.mean);
    }

    /// Cosine of two SH vectors from the addition theorem: the degree-`l` dot
    /// product is `(2l + 1) / (4 pi) P_l(cos gamma)`.
    fn addition_theorem_cosine(a: GeoCoord, b: GeoCoord, cutoff: usize) -> f64 {
        let (ta, tb) = (to_spherical(a).unwrap(), to_spherical(b).unwrap());
        let cg = (ta.theta.cos() * tb.theta.cos() + ta.theta.sin() * tb.theta.sin() * (ta.phi - tb.phi).cos())
            .clamp(-1.0, 1.0);
        let (mut p0, mut p1) = (1.0, cg);
        let mut dot = 1.0;
        for l in 1..cutoff {
            let lf = l as f64;
            let term = if l == 1 { p1 } else {
                let p2 = ((2.0 * lf - 1.0) * cg * p1 - (lf - 1.0) * p0) / lf;
                p0 = p1;
                p1 = p2;
                p2
            };
            dot += (2.0 * lf + 1.0) * term;
        }
        dot / (cutoff * cutoff) as f64
    }

    #[test]
    fn raw_cosine_matches_addition_theorem() {
        let pairs = sample_pairs(50, 8);
        let r = gpe_pairs_eval(GpeSource::Raw { cutoff: 27 }, &pairs).unwrap();
        for (p, s) in pairs.iter().zip(&r.similarities) {
            assert!((addition_theorem_cosine(p.p1, p.p2, 27) - s).abs() < 1e-9);
        }
        let v: ShVector = sh_vector(to_spherical(pairs[0].p1).unwrap(), 27).unwrap();
        assert_eq!(v.len(), 729);
    }

    #[test]
    fn longitude_offset_invariance() {
        let pairs = sample_pairs(200, 4);
        let shift = |c: GeoCoord, d: f64| GeoCoord {
            lat: c.lat,
            lon: (c.lon + d + 180.0).rem_euclid(360.0) - 180.0,
        };
        let moved: Vec<PairSample> = pairs
            .iter()
            .map(|p| PairSample::new(shift(p.p1, 37.5), shift(p.p2, 37.5)))
            .collect();
        let a = gpe_pairs_eval(GpeSource::Raw { cutoff: 27 }, &pairs).unwrap();
        let b = gpe_pairs_eval(GpeSource::Raw { cutoff: 27 }, &moved).unwrap();
        for (x, y) in a.similarities.iter().zip(&b.similarities) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_inputs() {
        let c = GeoCoord::new(10.0, 20.0).unwrap();
        let same = vec![PairSample::new(c, c); 5];
        let src = GpeSource::Raw { cutoff: 27 };
        assert!(matches!(gpe_pairs_eval(src, &same), Err(Error::Undefined(_))));
        assert!(matches!(gpe_pairs_eval(src, &same[..1]), Err(Error::InvalidArgument(_))));
        let v = src.vector(c).unwrap();
        assert!((cosine(&v, &v) - 1.0).abs() < 1e-15);
    }
}
