//! Deterministic geo-tagged multispectral samples.
//!
//! Each image is a smooth random field shared (with per-band gains) across
//! channels, plus an oriented sinusoidal texture whose direction encodes the
//! land-cover category, plus a per-band offset driven by latitude. Locations
//! come in tight clusters so that both close and far pairs occur.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{destination, GeoCoord};
use crate::raster::{GeoMeta, Raster};

pub const CATEGORIES: [&str; 4] = ["field", "forest", "urban", "water"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub count: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default)]
    pub seed: u64,
    /// Strength of the latitude-dependent spectral offset.
    #[serde(default = "d_geo")]
    pub geo_signal: f64,
    /// Amplitude of the category texture.
    #[serde(default = "d_tex")]
    pub texture_strength: f64,
    /// Wavelet depth the images must support.
    #[serde(default = "d_levels")]
    pub levels: usize,
    /// Samples per location cluster.
    #[serde(default = "d_cluster")]
    pub cluster_size: usize,
    /// Maximum distance of a sample from its cluster centre.
    #[serde(default = "d_radius")]
    pub cluster_radius_km: f64,
}

fn d_geo() -> f64 {
    1.0
}
fn d_tex() -> f64 {
    1.0
}
fn d_levels() -> usize {
    4
}
fn d_cluster() -> usize {
    8
}
fn d_radius() -> f64 {
    90.0
}

impl SynthSpec {
    pub fn new(count: usize, channels: usize, height: usize, width: usize, seed: u64) -> Self {
        Self {
            count,
            channels,
            height,
            width,
            seed,
            geo_signal: d_geo(),
            texture_strength: d_tex(),
            levels: d_levels(),
            cluster_size: d_cluster(),
            cluster_radius_km: d_radius(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config("synth count and image sizes must be positive".into()));
        }
        if self.levels == 0 || self.cluster_size == 0 {
            return Err(Error::Config("levels and cluster_size must be positive".into()));
        }
        let block = 1usize << self.levels;
        if self.height % block != 0 || self.width % block != 0 {
            return Err(Error::Shape(format!(
                "{}x{} is not divisible by 2^{} = {block}",
                self.height, self.width, self.levels
            )));
        }
        if !(self.geo_signal >= 0.0) || !(self.texture_strength >= 0.0) || !(self.cluster_radius_km >= 0.0) {
            return Err(Error::Config("synth strengths and radius must be non-negative".into()));
        }
        Ok(())
    }
}

/// Uniform point on the sphere.
pub fn uniform_coord<R: Rng + ?Sized>(rng: &mut R) -> GeoCoord {
    let lat = rng.gen_range(-1.0f64..1.0).asin().to_degrees();
    let lon = rng.gen_range(-180.0..180.0);
    GeoCoord { lat, lon }
}

/// Point within `radius_km` of `center`, uniform over the disc area.
pub fn near<R: Rng + ?Sized>(rng: &mut R, center: GeoCoord, radius_km: f64) -> GeoCoord {
    let d = radius_km * rng.gen::<f64>().sqrt();
    destination(center, rng.gen_range(0.0..360.0), d)
}

struct Wave {
    amp: f64,
    ky: f64,
    kx: f64,
    phase: f64,
}

/// Sample generator for a fixed location, category and randomness source.
pub fn synth_image<R: Rng + ?Sized>(
    spec: &SynthSpec,
    coord: GeoCoord,
    category: usize,
    rng: &mut R,
) -> Raster<f32> {
    let (c, h, w) = (spec.channels, spec.height, spec.width);
    let waves: Vec<Wave> = (0..4)
        .map(|_| Wave {
            amp: rng.gen_range(0.3..1.0),
            ky: rng.gen_range(0..3) as f64,
            kx: rng.gen_range(0..3) as f64,
            phase: rng.gen_range(0.0..2.0 * PI),
        })
        .collect();
    let gains: Vec<f64> = (0..c).map(|_| rng.gen_range(0.6..1.0)).collect();
    let own: Vec<Wave> = (0..c)
        .map(|_| Wave {
            amp: rng.gen_range(0.1..0.3),
            ky: rng.gen_range(0..2) as f64,
            kx: rng.gen_range(0..2) as f64,
            phase: rng.gen_range(0.0..2.0 * PI),
        })
        .collect();
    let angle = category as f64 * PI / CATEGORIES.len() as f64;
    let (sa, ca) = angle.sin_cos();
    let freq = (w.min(h) as f64 / 8.0).max(1.0);
    let tex_phase = rng.gen_range(0.0..2.0 * PI);
    let lat = coord.lat.to_radians();
    let bias: Vec<f64> = (0..c)
        .map(|ch| spec.geo_signal * 0.2 * lat.sin() * (PI * (ch as f64 + 0.5) / c as f64).cos())
        .collect();
    let wave = |wv: &Wave, y: f64, x: f64| {
        wv.amp * (2.0 * PI * (wv.ky * y / h as f64 + wv.kx * x / w as f64) + wv.phase).cos()
    };
    let mut img = Raster::from_fn(c, h, w, |ch, y, x| {
        let (yf, xf) = (y as f64, x as f64);
        let shared: f64 = waves.iter().map(|wv| wave(wv, yf, xf)).sum::<f64>() / 4.0;
        let field = gains[ch] * shared + wave(&own[ch], yf, xf);
        let t = (2.0 * PI * freq * (xf * ca + yf * sa) / w as f64 + tex_phase).sin();
        let v = 0.5 + 0.2 * field + 0.1 * spec.texture_strength * t + bias[ch];
        v.clamp(0.0, 1.0) as f32
    });
    img.geo = Some(GeoMeta {
        coord,
        category: Some(CATEGORIES[category].to_string()),
    });
    img
}

/// The whole dataset; identical for identical specs.
pub fn synth_dataset(spec: &SynthSpec) -> Result<Vec<Raster<f32>>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.count);
    let mut center = uniform_coord(&mut rng);
    for i in 0..spec.count {
        if i % spec.cluster_size == 0 {
            center = uniform_coord(&mut rng);
        }
        let coord = near(&mut rng, center, spec.cluster_radius_km);
        let category = rng.gen_range(0..CATEGORIES.len());
        out.push(synth_image(spec, coord, category, &mut rng));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::haversine;

    #[test]
    fn deterministic() {
        let spec = SynthSpec::new(6, 3, 16, 16, 4);
        assert_eq!(synth_dataset(&spec).unwrap(), synth_dataset(&spec).unwrap());
        let other = SynthSpec { seed: 5, ..spec.clone() };
        assert_ne!(synth_dataset(&spec).unwrap(), synth_dataset(&other).unwrap());
    }

    #[test]
    fn values_and_metadata() {
        let spec = SynthSpec::new(20, 4, 32, 32, 1);
        let data = synth_dataset(&spec).unwrap();
        for (i, x) in data.iter().enumerate() {
            assert!(x.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let g = x.geo.as_ref().unwrap();
            g.coord.validate().unwrap();
            assert!(g.category.is_some());
            if i % 8 != 0 {
                let prev = data[i - 1].geo.as_ref().unwrap().coord;
                assert!(haversine(prev, g.coord) < 2.0 * spec.cluster_radius_km + 1e-6);
            }
        }
    }

    #[test]
    fn divisibility_checked() {
        let spec = SynthSpec::new(1, 1, 24, 24, 0);
        assert!(matches!(synth_dataset(&spec), Err(Error::Shape(_))));
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    fn band_mean_vs_lat(geo_signal: f64) -> f64 {
        let mut spec = SynthSpec::new(400, 2, 16, 16, 11);
        spec.geo_signal = geo_signal;
        spec.cluster_size = 1;
        let data = synth_dataset(&spec).unwrap();
        let lat: Vec<f64> = data.iter().map(|x| x.geo.as_ref().unwrap().coord.lat.to_radians().sin()).collect();
        let mean: Vec<f64> = data
            .iter()
            .map(|x| x.channel(0).iter().map(|&v| v as f64).sum::<f64>() / 256.0)
            .collect();
        pearson(&lat, &mean)
    }

    #[test]
    fn latitude_signal_switch() {
        assert!(band_mean_vs_lat(0.0).abs() < 0.15);
        assert!(band_mean_vs_lat(1.0) > 0.5);
    }
}
