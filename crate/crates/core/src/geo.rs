//! Geographic primitives: coordinate conversion, real spherical harmonics,
//! the geo-conditioned positional encoding, great-circle distance and rank
//! correlation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Default harmonic degree cutoff; yields `27^2 = 729` coefficients.
pub const DEFAULT_SH_CUTOFF: usize = 27;

/// Latitude/longitude in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoCoord {
    pub lat: f64,
    pub lon: f64,
}

impl GeoCoord {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        let c = Self { lat, lon };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lat.is_finite() || !(-90.0..=90.0).contains(&self.lat) {
            return Err(Error::Range(format!("latitude {} outside [-90, 90]", self.lat)));
        }
        if !self.lon.is_finite() || !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::Range(format!("longitude {} outside [-180, 180]", self.lon)));
        }
        Ok(())
    }
}

/// Polar angle `theta` in `[0, pi]` and azimuth `phi` in `[0, 2 pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalAngles {
    pub theta: f64,
    pub phi: f64,
}

/// `theta = rad(lat + 90)`, `phi = rad(lon + 180)`.
pub fn to_spherical(c: GeoCoord) -> Result<SphericalAngles> {
    c.validate()?;
    Ok(SphericalAngles {
        theta: (c.lat + 90.0).to_radians(),
        phi: (c.lon + 180.0).to_radians(),
    })
}

/// Fully normalized associated Legendre function `P̄_l^m(x)`, `m >= 0`.
///
/// Normalized so that `Y_l^0 = P̄_l^0(cos θ)` has unit L2 norm on the sphere,
/// i.e. `P̄_l^m = sqrt((2l+1)/(4π) (l-m)!/(l+m)!) P_l^m` with `P_l^m` carrying
/// the Condon-Shortley phase. Evaluated with the upward recurrence in `l`
/// seeded from the closed-form diagonal, never forming factorials.
pub fn assoc_legendre_norm(l: usize, m: usize, x: f64) -> Result<f64> {
    if m > l {
        return Err(Error::InvalidArgument(format!("order {m} exceeds degree {l}")));
    }
    if !(x.abs() <= 1.0) {
        return Err(Error::Range(format!("legendre argument {x} outside [-1, 1]")));
    }
    let sin = (1.0 - x * x).max(0.0).sqrt();
    let mut pmm = 1.0 / (4.0 * PI).sqrt();
    for k in 1..=m {
        let k = k as f64;
        pmm *= -((2.0 * k + 1.0) / (2.0 * k)).sqrt() * sin;
    }
    if l == m {
        return Ok(pmm);
    }
    let mf = m as f64;
    let mut prev = pmm;
    let mut cur = (2.0 * mf + 3.0).sqrt() * x * pmm;
    for ll in (m + 2)..=l {
        let lf = ll as f64;
        let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
        let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
        let next = a * (x * cur - b * prev);
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// Real spherical harmonic `Y_l^m(θ, φ)`:
///
/// * `m < 0`: `(-1)^m sqrt(2) P̄_l^|m|(cos θ) sin(|m| φ)`
/// * `m = 0`: `P̄_l^0(cos θ)`
/// * `m > 0`: `(-1)^m sqrt(2) P̄_l^m(cos θ) cos(m φ)`
pub fn real_sh(l: usize, m: i64, theta: f64, phi: f64) -> Result<f64> {
    let am = m.unsigned_abs() as usize;
    if am > l {
        return Err(Error::InvalidArgument(format!("|m| = {am} exceeds degree {l}")));
    }
    let p = assoc_legendre_norm(l, am, theta.cos().clamp(-1.0, 1.0))?;
    let sign = if am % 2 == 0 { 1.0 } else { -1.0 };
    Ok(match m.signum() {
        -1 => sign * std::f64::consts::SQRT_2 * p * (am as f64 * phi).sin(),
        0 => p,
        _ => sign * std::f64::consts::SQRT_2 * p * (am as f64 * phi).cos(),
    })
}

/// Concatenated real harmonics `[Y_0^0, Y_1^-1, Y_1^0, Y_1^1, ..., Y_{L-1}^{L-1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShVector {
    cutoff: usize,
    coeffs: Vec<f64>,
}

impl ShVector {
    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Flat index of `(l, m)`.
    pub fn index(l: usize, m: i64) -> usize {
        l * l + (m + l as i64) as usize
    }
}

/// Evaluates all `L^2` real harmonics at once. The Legendre table is built
/// column by column (fixed `m`) with the same recurrence as
/// [`assoc_legendre_norm`].
pub fn sh_vector(angles: SphericalAngles, cutoff: usize) -> Result<ShVector> {
    if cutoff == 0 {
        return Err(Error::InvalidArgument("harmonic cutoff must be >= 1".into()));
    }
    let x = angles.theta.cos().clamp(-1.0, 1.0);
    let sin = (1.0 - x * x).max(0.0).sqrt();
    let lmax = cutoff - 1;
    // plm[l * cutoff + m]
    let mut plm = vec![0.0; cutoff * cutoff];
    let mut pmm = 1.0 / (4.0 * PI).sqrt();
    for m in 0..=lmax {
        if m > 0 {
            let k = m as f64;
            pmm *= -((2.0 * k + 1.0) / (2.0 * k)).sqrt() * sin;
        }
        plm[m * cutoff + m] = pmm;
        if m == lmax {
            break;
        }
        let mf = m as f64;
        let mut prev = pmm;
        let mut cur = (2.0 * mf + 3.0).sqrt() * x * pmm;
        plm[(m + 1) * cutoff + m] = cur;
        for l in (m + 2)..=lmax {
            let lf = l as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0))
                .sqrt();
            let next = a * (x * cur - b * prev);
            plm[l * cutoff + m] = next;
            prev = cur;
            cur = next;
        }
    }
    let mut coeffs = Vec::with_capacity(cutoff * cutoff);
    for l in 0..=lmax {
        for m in -(l as i64)..=(l as i64) {
            let am = m.unsigned_abs() as usize;
            let p = plm[l * cutoff + am];
            let sign = if am % 2 == 0 { 1.0 } else { -1.0 };
            let v = match m.signum() {
                -1 => sign * std::f64::consts::SQRT_2 * p * (am as f64 * angles.phi).sin(),
                0 => p,
                _ => sign * std::f64::consts::SQRT_2 * p * (am as f64 * angles.phi).cos(),
            };
            coeffs.push(v);
        }
    }
    Ok(ShVector { cutoff, coeffs })
}

/// Convenience: harmonics of a geographic coordinate.
pub fn sh_of_coord(c: GeoCoord, cutoff: usize) -> Result<ShVector> {
    sh_vector(to_spherical(c)?, cutoff)
}

/// Affine projection from `L^2` harmonics to the encoder width.
#[derive(Debug, Clone, PartialEq)]
pub struct GpeProjection {
    /// Row-major `L^2 x D`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl GpeProjection {
    pub fn new(weights: Vec<f64>, bias: Vec<f64>, in_dim: usize, out_dim: usize) -> Result<Self> {
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::Shape(format!(
                "projection {in_dim}x{out_dim} needs {} weights and {out_dim} biases, got {} and {}",
                in_dim * out_dim,
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            weights,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }
}

/// `weightsᵀ v + bias`.
pub fn gpe(v: &ShVector, p: &GpeProjection) -> Result<Vec<f64>> {
    if v.len() != p.in_dim {
        return Err(Error::Shape(format!(
            "harmonic vector has {} entries, projection expects {}",
            v.len(),
            p.in_dim
        )));
    }
    let mut out = p.bias.clone();
    for (i, &vi) in v.coeffs().iter().enumerate() {
        let row = &p.weights[i * p.out_dim..(i + 1) * p.out_dim];
        for (o, w) in out.iter_mut().zip(row) {
            *o += vi * w;
        }
    }
    Ok(out)
}

/// Great-circle distance in kilometres on the `R = 6371 km` sphere.
pub fn haversine(p1: GeoCoord, p2: GeoCoord) -> f64 {
    let (lat1, lat2) = (p1.lat.to_radians(), p2.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (p2.lon - p1.lon).to_radians();
    let a = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.clamp(0.0, 1.0).sqrt().asin()
}

/// Point reached from `start` after travelling `distance_km` along the
/// initial bearing `bearing` (radians, clockwise from north).
pub fn destination(start: GeoCoord, bearing: f64, distance_km: f64) -> GeoCoord {
    let delta = distance_km / EARTH_RADIUS_KM;
    let lat1 = start.lat.to_radians();
    let lon1 = start.lon.to_radians();
    let sin_lat2 = (lat1.sin() * delta.cos() + lat1.cos() * delta.sin() * bearing.cos()).clamp(-1.0, 1.0);
    let lat2 = sin_lat2.asin();
    let lon2 = lon1
        + (bearing.sin() * delta.sin() * lat1.cos()).atan2(delta.cos() - lat1.sin() * sin_lat2);
    let mut lon = lon2.to_degrees();
    lon = (lon + 180.0).rem_euclid(360.0) - 180.0;
    GeoCoord {
        lat: lat2.to_degrees().clamp(-90.0, 90.0),
        lon,
    }
}

/// Ranks starting at 1; tied values share the average of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && xs[order[j]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!(
            "spearman inputs differ in length: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::Undefined("spearman needs at least 2 observations".into()));
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
        .ok_or_else(|| Error::Undefined("spearman correlation with zero rank variance".into()))
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            // p1 = P_n(x), p0 = P_{n-1}(x)
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        nodes[n - 1 - i] = -x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn spherical_conversion() {
        let a = to_spherical(GeoCoord::new(-90.0, -180.0).unwrap()).unwrap();
        assert_eq!((a.theta, a.phi), (0.0, 0.0));
        let a = to_spherical(GeoCoord::new(0.0, 0.0).unwrap()).unwrap();
        assert!(close(a.theta, PI / 2.0, 1e-15) && close(a.phi, PI, 1e-15));
        let a = to_spherical(GeoCoord::new(45.0, 90.0).unwrap()).unwrap();
        assert!(close(a.theta, 3.0 * PI / 4.0, 1e-15) && close(a.phi, 1.5 * PI, 1e-15));
        assert!(GeoCoord::new(91.0, 0.0).is_err());
        assert!(to_spherical(GeoCoord { lat: 0.0, lon: 200.0 }).is_err());
    }

    /// Independent closed form: Legendre polynomial coefficients, differentiated
    /// `m` times, times `(-1)^m (1-x^2)^{m/2}` and the factorial normalization.
    fn legendre_oracle(l: usize, m: usize, x: f64) -> f64 {
        let fact = |n: usize| (1..=n).map(|k| k as f64).product::<f64>();
        let binom = |n: usize, k: usize| fact(n) / (fact(k) * fact(n - k));
        // P_l(x) = 2^-l sum_k (-1)^k C(l,k) C(2l-2k, l) x^(l-2k)
        let mut coef = vec![0.0; l + 1];
        for k in 0..=l / 2 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            coef[l - 2 * k] = sign * binom(l, k) * binom(2 * l - 2 * k, l) / 2f64.powi(l as i32);
        }
        for _ in 0..m {
            coef = (1..coef.len()).map(|p| coef[p] * p as f64).collect();
            if coef.is_empty() {
                coef.push(0.0);
            }
        }
        let poly: f64 = coef.iter().enumerate().map(|(p, c)| c * x.powi(p as i32)).sum();
        let cs = if m % 2 == 0 { 1.0 } else { -1.0 };
        let plm = cs * (1.0 - x * x).powf(m as f64 / 2.0) * poly;
        let norm = ((2 * l + 1) as f64 / (4.0 * PI) * fact(l - m) / fact(l + m)).sqrt();
        norm * plm
    }

    #[test]
    fn legendre_seed_values() {
        for x in [-1.0, -0.3, 0.0, 0.7, 1.0] {
            assert!(close(assoc_legendre_norm(0, 0, x).unwrap(), 0.282_094_791_773_878_1, 1e-15));
        }
        assert!(close(assoc_legendre_norm(1, 0, 1.0).unwrap(), (3.0 / (4.0 * PI)).sqrt(), 1e-15));
        assert!(close(assoc_legendre_norm(1, 0, 1.0).unwrap(), 0.488_602_5, 1e-7));
        assert!(close(assoc_legendre_norm(2, 1, 0.0).unwrap(), legendre_oracle(2, 1, 0.0), 1e-15));
        assert!(close(assoc_legendre_norm(2, 1, 0.5).unwrap(), legendre_oracle(2, 1, 0.5), 1e-14));
    }

    #[test]
    fn legendre_matches_closed_form() {
        for l in 0..=10 {
            for m in 0..=l {
                for x in [-0.95, -0.4, 0.1, 0.66, 0.999] {
                    let got = assoc_legendre_norm(l, m, x).unwrap();
                    let want = legendre_oracle(l, m, x);
                    assert!(close(got, want, 1e-11), "l={l} m={m} x={x}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn legendre_errors() {
        assert!(assoc_legendre_norm(2, 3, 0.0).is_err());
        assert!(assoc_legendre_norm(2, 1, 1.5).is_err());
        assert!(assoc_legendre_norm(2, 1, f64::NAN).is_err());
        assert!(real_sh(2, -3, 0.1, 0.1).is_err());
    }

    #[test]
    fn degree_one_closed_forms() {
        let (t, p) = (PI / 3.0, PI / 4.0);
        let k = (3.0 / (4.0 * PI)).sqrt();
        assert!(close(real_sh(1, -1, t, p).unwrap(), k * t.sin() * p.sin(), 1e-15));
        assert!(close(real_sh(1, 0, t, p).unwrap(), k * t.cos(), 1e-15));
        assert!(close(real_sh(1, 1, t, p).unwrap(), k * t.sin() * p.cos(), 1e-15));
        assert!(close(real_sh(0, 0, 1.2, 4.0).unwrap(), 0.5 / PI.sqrt(), 1e-15));
    }

    #[test]
    fn sum_over_orders_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = SphericalAngles {
                theta: rng.gen_range(0.0..PI),
                phi: rng.gen_range(0.0..2.0 * PI),
            };
            let v = sh_vector(a, 27).unwrap();
            for l in 0..27usize {
                let s: f64 = (-(l as i64)..=l as i64)
                    .map(|m| v.coeffs()[ShVector::index(l, m)].powi(2))
                    .sum();
                assert!(close(s, (2 * l + 1) as f64 / (4.0 * PI), 1e-9));
            }
        }
    }

    #[test]
    fn vector_layout() {
        let a = SphericalAngles { theta: 0.7, phi: 2.1 };
        assert_eq!(sh_vector(a, 27).unwrap().len(), 729);
        let one = sh_vector(a, 1).unwrap();
        assert_eq!(one.coeffs(), &[real_sh(0, 0, 0.7, 2.1).unwrap()]);
        let v = sh_vector(a, 3).unwrap();
        let mut i = 0;
        for l in 0..3usize {
            for m in -(l as i64)..=l as i64 {
                assert_eq!(ShVector::index(l, m), i);
                assert!(close(v.coeffs()[i], real_sh(l, m, 0.7, 2.1).unwrap(), 1e-14));
                i += 1;
            }
        }
        assert!(sh_vector(a, 0).is_err());
    }

    #[test]
    fn vectorized_matches_scalar_at_high_degree() {
        let a = SphericalAngles { theta: 2.3, phi: 5.9 };
        let v = sh_vector(a, 27).unwrap();
        for l in [20usize, 26] {
            for m in [-(l as i64), -3, 0, 7, l as i64] {
                let s = real_sh(l, m, a.theta, a.phi).unwrap();
                assert!(close(v.coeffs()[ShVector::index(l, m)], s, 1e-13));
            }
        }
    }

    #[test]
    fn quadrature_orthonormality() {
        let lmax = 8;
        let (nodes, weights) = gauss_legendre(20);
        let nphi = 24;
        let n = (lmax + 1) * (lmax + 1);
        let mut gram = vec![0.0; n * n];
        for (x, w) in nodes.iter().zip(&weights) {
            let theta = x.acos();
            for k in 0..nphi {
                let phi = 2.0 * PI * k as f64 / nphi as f64;
                let v = sh_vector(SphericalAngles { theta, phi }, lmax + 1).unwrap();
                let wt = w * 2.0 * PI / nphi as f64;
                for i in 0..n {
                    for j in 0..n {
                        gram[i * n + j] += wt * v.coeffs()[i] * v.coeffs()[j];
                    }
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!(close(gram[i * n + j], want, 1e-6), "({i},{j}) = {}", gram[i * n + j]);
            }
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(10);
        let sum_w: f64 = w.iter().sum();
        assert!(close(sum_w, 2.0, 1e-14));
        let i: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(18)).sum();
        assert!(close(i, 2.0 / 19.0, 1e-14));
    }

    #[test]
    fn projection() {
        let a = SphericalAngles { theta: 1.0, phi: 1.0 };
        let v = sh_vector(a, 3).unwrap();
        let mut p = GpeProjection::zeros(9, 4);
        p.bias = vec![1.0, -2.0, 3.0, 0.5];
        assert_eq!(gpe(&v, &p).unwrap(), p.bias);

        let mut p = GpeProjection::zeros(9, 4);
        for i in 0..4 {
            p.weights[i * 4 + i] = 1.0;
        }
        assert_eq!(gpe(&v, &p).unwrap(), v.coeffs()[..4].to_vec());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w: Vec<f64> = (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = GpeProjection::new(w.clone(), b.clone(), 9, 4).unwrap();
        let out = gpe(&v, &p).unwrap();
        for d in 0..4 {
            let mut acc = b[d];
            for i in 0..9 {
                acc += w[i * 4 + d] * v.coeffs()[i];
            }
            assert!(close(out[d], acc, 1e-14));
        }
        assert!(gpe(&sh_vector(a, 2).unwrap(), &p).is_err());
        assert!(GpeProjection::new(vec![0.0; 3], vec![0.0; 4], 9, 4).is_err());
    }

    /// Independent geodesic: angle between unit vectors via atan2 of cross and dot.
    fn geodesic_oracle(p1: GeoCoord, p2: GeoCoord) -> f64 {
        let v = |c: GeoCoord| {
            let (la, lo) = (c.lat.to_radians(), c.lon.to_radians());
            [la.cos() * lo.cos(), la.cos() * lo.sin(), la.sin()]
        };
        let (a, b) = (v(p1), v(p2));
        let cross = [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ];
        let cn = (cross[0].powi(2) + cross[1].powi(2) + cross[2].powi(2)).sqrt();
        let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        EARTH_RADIUS_KM * cn.atan2(dot)
    }

    #[test]
    fn haversine_examples() {
        let o = GeoCoord::new(0.0, 0.0).unwrap();
        assert_eq!(haversine(o, o), 0.0);
        let antipode = GeoCoord::new(0.0, 180.0).unwrap();
        let quarter = GeoCoord::new(0.0, 90.0).unwrap();
        assert!(close(haversine(o, antipode), geodesic_oracle(o, antipode), 1e-6));
        assert!(close(haversine(o, antipode), 20015.09, 0.01));
        assert!(close(haversine(o, quarter), 10007.54, 0.01));
    }

    #[test]
    fn haversine_metric_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut pt = || GeoCoord {
            lat: rng.gen_range(-90.0..90.0),
            lon: rng.gen_range(-180.0..180.0),
        };
        for _ in 0..500 {
            let (a, b, c) = (pt(), pt(), pt());
            let ab = haversine(a, b);
            assert!(ab >= 0.0);
            assert!(close(ab, haversine(b, a), 1e-9));
            assert!(close(ab, geodesic_oracle(a, b), 1e-6));
            assert!(ab <= haversine(a, c) + haversine(c, b) + 1e-9);
            assert!(haversine(a, a).abs() < 1e-9);
        }
    }

    #[test]
    fn destination_distance_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let s = GeoCoord {
                lat: rng.gen_range(-85.0..85.0),
                lon: rng.gen_range(-180.0..180.0),
            };
            let d = rng.gen_range(1.0..190.0);
            let e = destination(s, rng.gen_range(0.0..2.0 * PI), d);
            e.validate().unwrap();
            assert!(close(haversine(s, e), d, 1e-6));
        }
    }

    #[test]
    fn spearman_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!(close(spearman(&xs, &[2.0, 4.0, 9.0, 10.0, 30.0]).unwrap(), 1.0, 1e-15));
        assert!(close(spearman(&xs, &[5.0, 4.0, 3.0, 2.0, -7.0]).unwrap(), -1.0, 1e-15));
        // ranks (1,2,3,4) vs (2,1,4,3): sum d^2 = 4, r = 1 - 6*4/(4*15) = 0.6
        assert!(close(spearman(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap(), 0.6, 1e-15));
        assert!(spearman(&[1.0], &[1.0]).is_err());
        assert!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(spearman(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn average_rank_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn spearman_monotone_invariance(
                xs in proptest::collection::vec(-100.0f64..100.0, 3..40),
                ys in proptest::collection::vec(-100.0f64..100.0, 40),
            ) {
                let ys = &ys[..xs.len()];
                if let Ok(r) = spearman(&xs, ys) {
                    let tx: Vec<f64> = xs.iter().map(|x| (x / 50.0).exp()).collect();
                    let ty: Vec<f64> = ys.iter().map(|y| y * y * y + 2.0 * y).collect();
                    let r2 = spearman(&tx, &ty).unwrap();
                    prop_assert!((r - r2).abs() < 1e-12);
                }
            }

            #[test]
            fn addition_theorem_depends_only_on_separation(
                t1 in 0.0f64..PI, p1 in 0.0f64..(2.0 * PI),
                t2 in 0.0f64..PI, p2 in 0.0f64..(2.0 * PI),
                shift in 0.0f64..(2.0 * PI),
            ) {
                let dot = |a: &ShVector, b: &ShVector| -> f64 {
                    a.coeffs().iter().zip(b.coeffs()).map(|(x, y)| x * y).sum()
                };
                let a = sh_vector(SphericalAngles { theta: t1, phi: p1 }, 27).unwrap();
                let b = sh_vector(SphericalAngles { theta: t2, phi: p2 }, 27).unwrap();
                let ar = sh_vector(SphericalAngles { theta: t1, phi: p1 + shift }, 27).unwrap();
                let br = sh_vector(SphericalAngles { theta: t2, phi: p2 + shift }, 27).unwrap();
                prop_assert!((dot(&a, &b) - dot(&ar, &br)).abs() < 1e-9);
            }
        }
    }
}
