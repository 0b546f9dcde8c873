//! Random resized crop, horizontal flip and range normalization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::raster::{Raster, Real};

/// Window `[y0, y0 + h) x [x0, x0 + w)` of the source image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crop {
    pub y0: usize,
    pub x0: usize,
    pub h: usize,
    pub w: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub crop: Crop,
    pub flip: bool,
}

/// Scale range of the crop area and flip probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub min_scale: f64,
    pub max_scale: f64,
    pub flip_prob: f64,
    /// Values are mapped by `(v - lo) / (hi - lo)` and clamped to `[0, 1]`.
    pub range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            min_scale: 0.2,
            max_scale: 1.0,
            flip_prob: 0.5,
            range: (0.0, 1.0),
        }
    }
}

impl AugmentParams {
    pub fn identity(h: usize, w: usize) -> Self {
        Self {
            crop: Crop { y0: 0, x0: 0, h, w },
            flip: false,
        }
    }

    /// Crop keeping the image aspect ratio, covering a uniformly drawn
    /// fraction of the area.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, h: usize, w: usize, cfg: &AugmentConfig) -> Self {
        let scale = rng.gen_range(cfg.min_scale..=cfg.max_scale);
        let side = scale.sqrt();
        let ch = ((h as f64 * side).round() as usize).clamp(1, h);
        let cw = ((w as f64 * side).round() as usize).clamp(1, w);
        let y0 = rng.gen_range(0..=h - ch);
        let x0 = rng.gen_range(0..=w - cw);
        let flip = rng.gen_bool(cfg.flip_prob);
        Self {
            crop: Crop { y0, x0, h: ch, w: cw },
            flip,
        }
    }
}

pub fn normalize<T: Real>(x: &Raster<T>, range: (f64, f64)) -> Raster<f64> {
    let (lo, hi) = range;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = x.map(|v| ((v.to_f64() - lo) / span).clamp(0.0, 1.0));
    out.geo = x.geo.clone();
    out
}

/// Bilinear resample of the crop window to `h x w`, sampling at pixel
/// centres and clamping at the window border. A full-image window is an
/// exact copy.
pub fn resize_crop(x: &Raster<f64>, crop: Crop, h: usize, w: usize) -> Raster<f64> {
    let coords = |n_out: usize, start: usize, len: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|i| {
                let s = ((i as f64 + 0.5) * len as f64 / n_out as f64 - 0.5).clamp(0.0, (len - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(len - 1);
                (start + i0, start + i1, s - i0 as f64)
            })
            .collect()
    };
    let ys = coords(h, crop.y0, crop.h);
    let xs = coords(w, crop.x0, crop.w);
    let mut out = Raster::from_fn(x.channels(), h, w, |c, i, j| {
        let (y0, y1, fy) = ys[i];
        let (x0, x1, fx) = xs[j];
        let top = if fx == 0.0 {
            x.get(c, y0, x0)
        } else {
            x.get(c, y0, x0) * (1.0 - fx) + x.get(c, y0, x1) * fx
        };
        if fy == 0.0 {
            return top;
        }
        let bottom = if fx == 0.0 {
            x.get(c, y1, x0)
        } else {
            x.get(c, y1, x0) * (1.0 - fx) + x.get(c, y1, x1) * fx
        };
        top * (1.0 - fy) + bottom * fy
    });
    out.geo = x.geo.clone();
    out
}

pub fn hflip(x: &Raster<f64>) -> Raster<f64> {
    let w = x.width();
    let mut out = Raster::from_fn(x.channels(), x.height(), w, |c, y, i| x.get(c, y, w - 1 - i));
    out.geo = x.geo.clone();
    out
}

pub fn apply_augment<T: Real>(x: &Raster<T>, p: &AugmentParams, cfg: &AugmentConfig) -> Raster<f64> {
    let n = normalize(x, cfg.range);
    let r = resize_crop(&n, p.crop, x.height(), x.width());
    if p.flip {
        hflip(&r)
    } else {
        r
    }
}

/// Normalize, random resized crop back to the input size, random flip.
pub fn augment<T: Real>(x: &Raster<T>, seed: u64) -> Raster<f64> {
    let cfg = AugmentConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = AugmentParams::sample(&mut rng, x.height(), x.width(), &cfg);
    apply_augment(x, &p, &cfg)
}
