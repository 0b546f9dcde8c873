//! Multi-level separable 2D Haar wavelet transform.
//!
//! One analysis level filters every row first (horizontal axis, `x`), then
//! every column (vertical axis, `y`), and downsamples by two along both axes.
//! Subbands are named by the filter applied along the vertical axis first and
//! the horizontal axis second:
//!
//! | band | vertical | horizontal | responds to |
//! |------|----------|------------|-------------|
//! | `LL` | low      | low        | approximation |
//! | `LH` | low      | high       | vertical edges ("vertical details") |
//! | `HL` | high     | low        | horizontal edges ("horizontal details") |
//! | `HH` | high     | high       | diagonal details |
//!
//! For a 2x2 block `[a b; c d]` with Haar this gives `LL = (a+b+c+d)/2`,
//! `LH = (a-b+c-d)/2`, `HL = (a+b-c-d)/2` and `HH = (a-b-c+d)/2`.
//!
//! All arithmetic happens in `f64`; results are stored in the raster's own
//! scalar type.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Real, Raster};

/// An orthonormal two-channel analysis filter pair.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletFilter {
    low: Vec<f64>,
    high: Vec<f64>,
}

impl WaveletFilter {
    pub fn haar() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            low: vec![s, s],
            high: vec![s, -s],
        }
    }

    /// Only two-tap filters are supported; longer filters would need boundary
    /// extension, which this transform does not implement.
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.len() != 2 || high.len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "only 2-tap filters are supported (got {} and {} taps)",
                low.len(),
                high.len()
            )));
        }
        Ok(Self { low, high })
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }
}

impl Default for WaveletFilter {
    fn default() -> Self {
        Self::haar()
    }
}

/// Subband identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Component {
    LH,
    HL,
    HH,
    LL,
}

impl Component {
    pub const HIGH: [Component; 3] = [Component::LH, Component::HL, Component::HH];

    pub fn name(self) -> &'static str {
        match self {
            Component::LH => "LH",
            Component::HL => "HL",
            Component::HH => "HH",
            Component::LL => "LL",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "LH" => Some(Component::LH),
            "HL" => Some(Component::HL),
            "HH" => Some(Component::HH),
            "LL" => Some(Component::LL),
            _ => None,
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `(level, component)` pairs in canonical order: level-major, `[LH, HL, HH]`
/// within each level, `LL` after the high-frequency bands of the deepest level.
pub fn component_order(depth: usize) -> Vec<(usize, Component)> {
    let mut out = Vec::with_capacity(3 * depth + 1);
    for level in 1..=depth {
        for c in Component::HIGH {
            out.push((level, c));
        }
    }
    out.push((depth, Component::LL));
    out
}

/// High-frequency bands of a single level.
#[derive(Debug, Clone, PartialEq)]
pub struct DetailBands<T = f32> {
    pub lh: Raster<T>,
    pub hl: Raster<T>,
    pub hh: Raster<T>,
}

impl<T: Real> DetailBands<T> {
    pub fn get(&self, c: Component) -> Option<&Raster<T>> {
        match c {
            Component::LH => Some(&self.lh),
            Component::HL => Some(&self.hl),
            Component::HH => Some(&self.hh),
            Component::LL => None,
        }
    }

    fn get_mut(&mut self, c: Component) -> Option<&mut Raster<T>> {
        match c {
            Component::LH => Some(&mut self.lh),
            Component::HL => Some(&mut self.hl),
            Component::HH => Some(&mut self.hh),
            Component::LL => None,
        }
    }
}

/// The full component set of an `N`-level decomposition: detail bands of
/// every level plus the approximation at the deepest level.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionSet<T = f32> {
    /// `details[j - 1]` holds level `j`.
    pub details: Vec<DetailBands<T>>,
    pub ll: Raster<T>,
}

impl<T: Real> DecompositionSet<T> {
    pub fn depth(&self) -> usize {
        self.details.len()
    }

    pub fn component_count(&self) -> usize {
        3 * self.depth() + 1
    }

    pub fn get(&self, level: usize, c: Component) -> Option<&Raster<T>> {
        if c == Component::LL {
            return (level == self.depth()).then_some(&self.ll);
        }
        self.details.get(level.checked_sub(1)?)?.get(c)
    }

    pub fn get_mut(&mut self, level: usize, c: Component) -> Option<&mut Raster<T>> {
        if c == Component::LL {
            return if level == self.depth() {
                Some(&mut self.ll)
            } else {
                None
            };
        }
        self.details.get_mut(level.checked_sub(1)?)?.get_mut(c)
    }

    /// Components in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, Component), &Raster<T>)> + '_ {
        component_order(self.depth())
            .into_iter()
            .map(move |key| (key, self.get(key.0, key.1).expect("canonical key")))
    }

    pub fn energy(&self) -> f64 {
        self.iter().map(|(_, r)| r.energy()).sum()
    }

    /// Same-shaped set with every coefficient zero.
    pub fn zeros_like(&self) -> Self {
        let z = |r: &Raster<T>| Raster::zeros(r.channels(), r.height(), r.width());
        Self {
            details: self
                .details
                .iter()
                .map(|d| DetailBands {
                    lh: z(&d.lh),
                    hl: z(&d.hl),
                    hh: z(&d.hh),
                })
                .collect(),
            ll: z(&self.ll),
        }
    }

    pub fn map<U: Real>(&self, mut f: impl FnMut(T) -> U) -> DecompositionSet<U> {
        DecompositionSet {
            details: self
                .details
                .iter()
                .map(|d| DetailBands {
                    lh: d.lh.map(&mut f),
                    hl: d.hl.map(&mut f),
                    hh: d.hh.map(&mut f),
                })
                .collect(),
            ll: self.ll.map(&mut f),
        }
    }

    pub fn cast<U: Real>(&self) -> DecompositionSet<U> {
        self.map(|v| U::from_f64(v.to_f64()))
    }

    /// Checks the shape chain: every band of level `j` is `C x h_j x w_j` with
    /// `h_j = 2 h_{j+1}`, and the approximation matches the deepest level.
    pub fn validate(&self) -> Result<()> {
        if self.details.is_empty() {
            return Err(Error::Shape("decomposition set has no levels".into()));
        }
        let (c, h, w) = self.ll.shape();
        let depth = self.depth();
        for (i, d) in self.details.iter().enumerate() {
            let scale = 1usize << (depth - 1 - i);
            let expect = (c, h * scale, w * scale);
            for (name, band) in [("LH", &d.lh), ("HL", &d.hl), ("HH", &d.hh)] {
                if band.shape() != expect {
                    return Err(Error::Shape(format!(
                        "{name}{} has shape {:?}, expected {:?}",
                        i + 1,
                        band.shape(),
                        expect
                    )));
                }
            }
        }
        Ok(())
    }

    /// Spatial dims of the original image this set decomposes.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let scale = 1usize << self.depth();
        let (c, h, w) = self.ll.shape();
        (c, h * scale, w * scale)
    }
}

/// One-dimensional analysis step: non-overlapping stride-2 windows.
pub fn dwt1d(signal: &[f64], filter: &WaveletFilter) -> Result<(Vec<f64>, Vec<f64>)> {
    if signal.len() % 2 != 0 {
        return Err(Error::Shape(format!(
            "signal length must be even, got {}",
            signal.len()
        )));
    }
    let (lo, hi) = (filter.low(), filter.high());
    let half = signal.len() / 2;
    let mut approx = Vec::with_capacity(half);
    let mut detail = Vec::with_capacity(half);
    for pair in signal.chunks_exact(2) {
        approx.push(lo[0] * pair[0] + lo[1] * pair[1]);
        detail.push(hi[0] * pair[0] + hi[1] * pair[1]);
    }
    Ok((approx, detail))
}

/// Inverse of [`dwt1d`] for an orthonormal filter pair.
pub fn idwt1d(approx: &[f64], detail: &[f64], filter: &WaveletFilter) -> Result<Vec<f64>> {
    if approx.len() != detail.len() {
        return Err(Error::Shape(format!(
            "approximation and detail lengths differ: {} vs {}",
            approx.len(),
            detail.len()
        )));
    }
    let (lo, hi) = (filter.low(), filter.high());
    let mut out = Vec::with_capacity(2 * approx.len());
    for (&a, &d) in approx.iter().zip(detail) {
        out.push(lo[0] * a + hi[0] * d);
        out.push(lo[1] * a + hi[1] * d);
    }
    Ok(out)
}

/// Output of one 2D analysis level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelOutput<T = f32> {
    pub ll: Raster<T>,
    pub lh: Raster<T>,
    pub hl: Raster<T>,
    pub hh: Raster<T>,
}

/// One level of 2D analysis, applied independently per channel.
pub fn dwt2d_level<T: Real>(input: &Raster<T>, filter: &WaveletFilter) -> Result<LevelOutput<T>> {
    let (c, h, w) = input.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "spatial dims must be even, got {h}x{w}"
        )));
    }
    let (lo, hi) = (filter.low(), filter.high());
    let (oh, ow) = (h / 2, w / 2);
    let mut ll = Raster::zeros(c, oh, ow);
    let mut lh = Raster::zeros(c, oh, ow);
    let mut hl = Raster::zeros(c, oh, ow);
    let mut hh = Raster::zeros(c, oh, ow);
    let mut row_lo = vec![0.0f64; ow];
    let mut row_hi = vec![0.0f64; ow];
    let mut next_lo = vec![0.0f64; ow];
    let mut next_hi = vec![0.0f64; ow];
    for ch in 0..c {
        for y in 0..oh {
            // rows first: filter rows 2y and 2y+1 along x
            for x in 0..ow {
                let a = input.get(ch, 2 * y, 2 * x).to_f64();
                let b = input.get(ch, 2 * y, 2 * x + 1).to_f64();
                let cc = input.get(ch, 2 * y + 1, 2 * x).to_f64();
                let d = input.get(ch, 2 * y + 1, 2 * x + 1).to_f64();
                row_lo[x] = lo[0] * a + lo[1] * b;
                row_hi[x] = hi[0] * a + hi[1] * b;
                next_lo[x] = lo[0] * cc + lo[1] * d;
                next_hi[x] = hi[0] * cc + hi[1] * d;
            }
            // then columns: combine the two filtered rows along y
            for x in 0..ow {
                ll.set(ch, y, x, T::from_f64(lo[0] * row_lo[x] + lo[1] * next_lo[x]));
                hl.set(ch, y, x, T::from_f64(hi[0] * row_lo[x] + hi[1] * next_lo[x]));
                lh.set(ch, y, x, T::from_f64(lo[0] * row_hi[x] + lo[1] * next_hi[x]));
                hh.set(ch, y, x, T::from_f64(hi[0] * row_hi[x] + hi[1] * next_hi[x]));
            }
        }
    }
    Ok(LevelOutput { ll, lh, hl, hh })
}

/// Inverse of [`dwt2d_level`].
pub fn idwt2d_level<T: Real>(
    ll: &Raster<T>,
    lh: &Raster<T>,
    hl: &Raster<T>,
    hh: &Raster<T>,
    filter: &WaveletFilter,
) -> Result<Raster<T>> {
    let shape = ll.shape();
    for (name, band) in [("LH", lh), ("HL", hl), ("HH", hh)] {
        if band.shape() != shape {
            return Err(Error::Shape(format!(
                "{name} has shape {:?}, LL has {:?}",
                band.shape(),
                shape
            )));
        }
    }
    let (lo, hi) = (filter.low(), filter.high());
    let (c, h, w) = shape;
    let mut out = Raster::zeros(c, 2 * h, 2 * w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let vll = ll.get(ch, y, x).to_f64();
                let vlh = lh.get(ch, y, x).to_f64();
                let vhl = hl.get(ch, y, x).to_f64();
                let vhh = hh.get(ch, y, x).to_f64();
                // undo the column step
                let row_lo = lo[0] * vll + hi[0] * vhl;
                let next_lo = lo[1] * vll + hi[1] * vhl;
                let row_hi = lo[0] * vlh + hi[0] * vhh;
                let next_hi = lo[1] * vlh + hi[1] * vhh;
                // undo the row step
                out.set(ch, 2 * y, 2 * x, T::from_f64(lo[0] * row_lo + hi[0] * row_hi));
                out.set(ch, 2 * y, 2 * x + 1, T::from_f64(lo[1] * row_lo + hi[1] * row_hi));
                out.set(ch, 2 * y + 1, 2 * x, T::from_f64(lo[0] * next_lo + hi[0] * next_hi));
                out.set(
                    ch,
                    2 * y + 1,
                    2 * x + 1,
                    T::from_f64(lo[1] * next_lo + hi[1] * next_hi),
                );
            }
        }
    }
    Ok(out)
}

/// `depth`-level decomposition, recursing on the approximation band.
pub fn dwt_multi<T: Real>(
    x: &Raster<T>,
    depth: usize,
    filter: &WaveletFilter,
) -> Result<DecompositionSet<T>> {
    if depth == 0 {
        return Err(Error::InvalidArgument("decomposition depth must be >= 1".into()));
    }
    let block = 1usize << depth;
    if x.height() % block != 0 || x.width() % block != 0 {
        return Err(Error::Shape(format!(
            "{}x{} is not divisible by 2^{depth} = {block}",
            x.height(),
            x.width()
        )));
    }
    let mut details = Vec::with_capacity(depth);
    let mut current = dwt2d_level(x, filter)?;
    for _ in 1..depth {
        let next = dwt2d_level(&current.ll, filter)?;
        details.push(DetailBands {
            lh: current.lh,
            hl: current.hl,
            hh: current.hh,
        });
        current = next;
    }
    details.push(DetailBands {
        lh: current.lh,
        hl: current.hl,
        hh: current.hh,
    });
    Ok(DecompositionSet {
        details,
        ll: current.ll,
    })
}

/// Reconstructs the image from a full component set.
pub fn idwt_multi<T: Real>(s: &DecompositionSet<T>, filter: &WaveletFilter) -> Result<Raster<T>> {
    s.validate()?;
    let mut ll = s.ll.clone();
    for d in s.details.iter().rev() {
        ll = idwt2d_level(&ll, &d.lh, &d.hl, &d.hh, filter)?;
    }
    Ok(ll)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_raster(c: usize, h: usize, w: usize, seed: u64) -> Raster<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Raster::from_fn(c, h, w, |_, _, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn haar_filter_is_orthonormal() {
        let f = WaveletFilter::haar();
        let ee: f64 = f.low().iter().map(|v| v * v).sum();
        let pp: f64 = f.high().iter().map(|v| v * v).sum();
        let ep: f64 = f.low().iter().zip(f.high()).map(|(a, b)| a * b).sum();
        assert!((ee - 1.0).abs() < 1e-15);
        assert!((pp - 1.0).abs() < 1e-15);
        assert!(ep.abs() < 1e-15);
    }

    #[test]
    fn long_filters_rejected() {
        assert!(WaveletFilter::new(vec![0.5; 4], vec![0.5; 4]).is_err());
    }

    #[test]
    fn dwt1d_constant_and_alternating() {
        let f = WaveletFilter::haar();
        let (a, d) = dwt1d(&[1.0, 1.0], &f).unwrap();
        assert!((a[0] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(d[0], 0.0);
        let (a, d) = dwt1d(&[1.0, -1.0], &f).unwrap();
        assert_eq!(a[0], 0.0);
        assert!((d[0] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn dwt1d_matches_direct_sums() {
        let f = WaveletFilter::haar();
        let s = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
        let (a, d) = dwt1d(&s, &f).unwrap();
        // direct evaluation: A[k] = sum_n x[n] eta_k[n] with eta_k supported on {2k, 2k+1}
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let expect_a = [4.0 * r, 5.0 * r, 14.0 * r, 8.0 * r];
        let expect_d = [2.0 * r, 3.0 * r, -4.0 * r, -4.0 * r];
        for k in 0..4 {
            assert!((a[k] - expect_a[k]).abs() < 1e-14);
            assert!((d[k] - expect_d[k]).abs() < 1e-14);
        }
        let back = idwt1d(&a, &d, &f).unwrap();
        for (x, y) in back.iter().zip(s) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn dwt1d_odd_length_rejected() {
        let err = dwt1d(&[1.0, 2.0, 3.0], &WaveletFilter::haar()).unwrap_err();
        assert!(err.to_string().contains("even"));
    }

    #[test]
    fn constant_image_level() {
        let x = Raster::<f64>::filled(2, 6, 4, 1.0);
        let out = dwt2d_level(&x, &WaveletFilter::haar()).unwrap();
        assert_eq!(out.ll.shape(), (2, 3, 2));
        for v in out.ll.data() {
            assert!((v - 2.0).abs() < 1e-15);
        }
        for band in [&out.lh, &out.hl, &out.hh] {
            assert!(band.data().iter().all(|v| v.abs() < 1e-15));
        }
    }

    #[test]
    fn horizontal_stripes_land_in_hl() {
        let x = Raster::<f64>::from_fn(1, 8, 8, |_, y, _| if y % 2 == 0 { 1.0 } else { 0.0 });
        let out = dwt2d_level(&x, &WaveletFilter::haar()).unwrap();
        assert!(out.lh.data().iter().all(|v| v.abs() < 1e-15));
        assert!(out.hh.data().iter().all(|v| v.abs() < 1e-15));
        assert!(out.hl.data().iter().all(|v| (v - 1.0).abs() < 1e-15));
        // vertical stripes go to LH
        let x = Raster::<f64>::from_fn(1, 8, 8, |_, _, xx| if xx % 2 == 0 { 1.0 } else { 0.0 });
        let out = dwt2d_level(&x, &WaveletFilter::haar()).unwrap();
        assert!(out.hl.data().iter().all(|v| v.abs() < 1e-15));
        assert!(out.lh.data().iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    /// Explicit double sums of the separable analysis with `eta(m) eta(n)` etc.
    fn level_oracle(x: &Raster<f64>) -> [Vec<f64>; 4] {
        let f = WaveletFilter::haar();
        let (h, w) = (x.height() / 2, x.width() / 2);
        let taps = |v: bool| if v { f.high().to_vec() } else { f.low().to_vec() };
        let mut out: [Vec<f64>; 4] = Default::default();
        // (vertical high?, horizontal high?) for LL, LH, HL, HH
        for (k, (vh, hh)) in [(false, false), (false, true), (true, false), (true, true)]
            .into_iter()
            .enumerate()
        {
            let (fv, fh) = (taps(vh), taps(hh));
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = 0.0;
                    for m in 0..2 {
                        for n in 0..2 {
                            acc += fv[m] * fh[n] * x.get(0, 2 * y + m, 2 * xx + n);
                        }
                    }
                    out[k].push(acc);
                }
            }
        }
        out
    }

    #[test]
    fn level_matches_double_sum_oracle() {
        let x = random_raster(1, 4, 4, 11);
        let out = dwt2d_level(&x, &WaveletFilter::haar()).unwrap();
        let oracle = level_oracle(&x);
        for (band, expect) in [&out.ll, &out.lh, &out.hl, &out.hh].into_iter().zip(oracle.iter()) {
            assert_eq!(band.shape(), (1, 2, 2));
            for (a, b) in band.data().iter().zip(expect) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn odd_dims_rejected() {
        let x = Raster::<f64>::zeros(1, 5, 4);
        assert!(dwt2d_level(&x, &WaveletFilter::haar()).is_err());
    }

    #[test]
    fn inverse_level_constant_and_shape_mismatch() {
        let f = WaveletFilter::haar();
        let ll = Raster::<f64>::filled(1, 3, 3, 2.0);
        let z = Raster::<f64>::zeros(1, 3, 3);
        let x = idwt2d_level(&ll, &z, &z, &z, &f).unwrap();
        assert_eq!(x.shape(), (1, 6, 6));
        assert!(x.data().iter().all(|v| (v - 1.0).abs() < 1e-15));
        let bad = Raster::<f64>::zeros(1, 2, 3);
        assert!(idwt2d_level(&ll, &bad, &z, &z, &f).is_err());
    }

    #[test]
    fn inverse_level_round_trip_double() {
        let f = WaveletFilter::haar();
        let x = random_raster(3, 8, 10, 5);
        let o = dwt2d_level(&x, &f).unwrap();
        let y = idwt2d_level(&o.ll, &o.lh, &o.hl, &o.hh, &f).unwrap();
        assert!(x.max_abs_diff(&y).unwrap() < 1e-12);
    }

    #[test]
    fn zeroed_hh_matches_explicit_inverse_sums() {
        let f = WaveletFilter::haar();
        let x = random_raster(1, 4, 4, 3);
        let mut o = dwt2d_level(&x, &f).unwrap();
        o.hh = Raster::zeros(1, 2, 2);
        let y = idwt2d_level(&o.ll, &o.lh, &o.hl, &o.hh, &f).unwrap();
        // explicit inverse: x(2y+m, 2x+n) = sum over bands of fv[m] fh[n] band(y,x)
        let (lo, hi) = (f.low(), f.high());
        for yy in 0..2 {
            for xx in 0..2 {
                for m in 0..2 {
                    for n in 0..2 {
                        let v = lo[m] * lo[n] * o.ll.get(0, yy, xx)
                            + lo[m] * hi[n] * o.lh.get(0, yy, xx)
                            + hi[m] * lo[n] * o.hl.get(0, yy, xx);
                        assert!((y.get(0, 2 * yy + m, 2 * xx + n) - v).abs() < 1e-14);
                    }
                }
            }
        }
        // the diagonal detail is gone, the rest is the 2x2-block smoothed image
        let hh_energy: f64 = dwt2d_level(&y, &f).unwrap().hh.energy();
        assert!(hh_energy < 1e-24);
    }

    #[test]
    fn multi_shapes() {
        let x = Raster::<f32>::zeros(1, 224, 224);
        let s = dwt_multi(&x, 4, &WaveletFilter::haar()).unwrap();
        let sizes: Vec<usize> = s.details.iter().map(|d| d.lh.height()).collect();
        assert_eq!(sizes, vec![112, 56, 28, 14]);
        assert_eq!(s.ll.shape(), (1, 14, 14));
        assert_eq!(s.component_count(), 13);

        let s = dwt_multi(&random_raster(4, 64, 64, 1), 3, &WaveletFilter::haar()).unwrap();
        assert_eq!(s.iter().count(), 10);
        let shapes: Vec<_> = s.iter().map(|(_, r)| r.shape()).collect();
        assert_eq!(&shapes[0..3], &[(4, 32, 32); 3]);
        assert_eq!(&shapes[3..6], &[(4, 16, 16); 3]);
        assert_eq!(&shapes[6..10], &[(4, 8, 8); 4]);

        let s = dwt_multi(&random_raster(1, 8, 8, 1), 1, &WaveletFilter::haar()).unwrap();
        let keys: Vec<_> = s.iter().map(|(k, _)| k).collect();
        assert_eq!(
            keys,
            vec![(1, Component::LH), (1, Component::HL), (1, Component::HH), (1, Component::LL)]
        );
    }

    #[test]
    fn multi_divisibility_rejected() {
        let x = Raster::<f32>::zeros(1, 24, 24);
        assert!(dwt_multi(&x, 4, &WaveletFilter::haar()).is_err());
        assert!(dwt_multi(&x, 3, &WaveletFilter::haar()).is_ok());
    }

    #[test]
    fn multi_round_trip_single_precision() {
        let x = random_raster(4, 64, 64, 9).cast::<f32>();
        let s = dwt_multi(&x, 4, &WaveletFilter::haar()).unwrap();
        let y = idwt_multi(&s, &WaveletFilter::haar()).unwrap();
        assert!(x.max_abs_diff(&y).unwrap() < 1e-4);
    }

    #[test]
    fn all_zero_set_gives_zero_image() {
        let x = random_raster(2, 16, 16, 2);
        let s = dwt_multi(&x, 2, &WaveletFilter::haar()).unwrap().zeros_like();
        let y = idwt_multi(&s, &WaveletFilter::haar()).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ll_only_is_blockwise_upsample() {
        let f = WaveletFilter::haar();
        let x = random_raster(2, 32, 32, 4);
        let depth = 3;
        let s = dwt_multi(&x, depth, &f).unwrap();
        let mut kept = s.zeros_like();
        kept.ll = s.ll.clone();
        let y = idwt_multi(&kept, &f).unwrap();
        let scale = (1u32 << depth) as f64;
        // nearest-neighbour upsample of LL_N scaled by 2^-N
        for c in 0..2 {
            for yy in 0..32 {
                for xx in 0..32 {
                    let v = s.ll.get(c, yy >> depth, xx >> depth) / scale;
                    assert!((y.get(c, yy, xx) - v).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn malformed_sets_rejected() {
        let x = random_raster(1, 16, 16, 4);
        let f = WaveletFilter::haar();
        let mut s = dwt_multi(&x, 2, &f).unwrap();
        s.details[0].hl = Raster::zeros(1, 4, 4);
        assert!(idwt_multi(&s, &f).is_err());
        let mut s = dwt_multi(&x, 2, &f).unwrap();
        s.ll = Raster::zeros(1, 2, 2);
        assert!(idwt_multi(&s, &f).is_err());
        let s = DecompositionSet::<f64> {
            details: vec![],
            ll: Raster::zeros(1, 2, 2),
        };
        assert!(idwt_multi(&s, &f).is_err());
    }

    #[test]
    fn channel_independence() {
        let f = WaveletFilter::haar();
        let x = random_raster(3, 16, 16, 8);
        let s = dwt_multi(&x, 2, &f).unwrap();
        for c in 0..3 {
            let sc = dwt_multi(&x.extract_channel(c), 2, &f).unwrap();
            for ((_, a), (_, b)) in s.iter().zip(sc.iter()) {
                assert_eq!(a.channel(c), b.channel(0));
            }
        }
    }

    #[test]
    fn constant_input_multi() {
        let f = WaveletFilter::haar();
        let c = 0.37;
        let x = Raster::<f64>::filled(2, 32, 32, c);
        let s = dwt_multi(&x, 4, &f).unwrap();
        for ((_, comp), band) in s.iter() {
            if comp == Component::LL {
                assert!(band.data().iter().all(|v| (v - 16.0 * c).abs() < 1e-12));
            } else {
                assert!(band.data().iter().all(|v| v.abs() < 1e-14));
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn round_trip_and_parseval(seed in any::<u64>(), depth in 1usize..=4, c in 1usize..=3) {
                let f = WaveletFilter::haar();
                let x = random_raster(c, 32, 48, seed);
                let s = dwt_multi(&x, depth, &f).unwrap();
                let y = idwt_multi(&s, &f).unwrap();
                prop_assert!(x.max_abs_diff(&y).unwrap() < 1e-9);
                let (ex, es) = (x.energy(), s.energy());
                prop_assert!(((ex - es) / ex).abs() < 1e-6);
            }

            #[test]
            fn linearity(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
                let f = WaveletFilter::haar();
                let x = random_raster(2, 16, 16, seed);
                let y = random_raster(2, 16, 16, seed.wrapping_add(1));
                let combo = Raster::from_vec(2, 16, 16,
                    x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
                let sc = dwt_multi(&combo, 3, &f).unwrap();
                let sx = dwt_multi(&x, 3, &f).unwrap();
                let sy = dwt_multi(&y, 3, &f).unwrap();
                for (((_, r), (_, p)), (_, q)) in sc.iter().zip(sx.iter()).zip(sy.iter()) {
                    for ((v, vp), vq) in r.data().iter().zip(p.data()).zip(q.data()) {
                        prop_assert!((v - (a * vp + b * vq)).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
