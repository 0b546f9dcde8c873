//! Raster container: `MSR1`, `u32` C, H, W, then `C H W` `f32` values, all
//! little-endian. Coordinates live in an optional `<name>.geo.json` sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::binary::{put_f32s, put_u32, Reader};
use crate::error::{Error, Result};
use crate::geo::GeoCoord;
use crate::raster::{GeoMeta, Raster};

pub const MSR_MAGIC: [u8; 4] = *b"MSR1";
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    lat: f64,
    lon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    category: Option<String>,
}

pub fn encode_msr(r: &Raster<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * r.len());
    out.extend_from_slice(&MSR_MAGIC);
    let (c, h, w) = r.shape();
    for d in [c, h, w] {
        put_u32(&mut out, d as u32);
    }
    put_f32s(&mut out, r.data().iter().copied());
    out
}

pub fn decode_msr(bytes: &[u8]) -> Result<Raster<f32>> {
    let mut rd = Reader::new(bytes);
    rd.magic(MSR_MAGIC)?;
    let c = rd.u32()? as usize;
    let h = rd.u32()? as usize;
    let w = rd.u32()? as usize;
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::Range(format!("raster dimensions {c}x{h}x{w} must be positive")));
    }
    let n = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::Range("raster dimensions overflow".into()))?;
    if rd.remaining() < n {
        return Err(Error::TruncatedPayload {
            expected: n,
            actual: rd.remaining(),
        });
    }
    let data = rd.f32s(c * h * w)?;
    rd.finish()?;
    Raster::from_vec(c, h, w, data)
}

/// `dir/name.msr` -> `dir/name.geo.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.geo.json"))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads the raster and, when present, its sidecar.
pub fn read_msr(path: impl AsRef<Path>) -> Result<Raster<f32>> {
    let path = path.as_ref();
    let raster = decode_msr(&read_file(path)?)?;
    let side = sidecar_path(path);
    let geo = if side.exists() {
        let s: Sidecar = serde_json::from_slice(&read_file(&side)?)
            .map_err(|e| Error::Format(format!("sidecar {}: {e}", side.display())))?;
        let coord = GeoCoord::new(s.lat, s.lon)?;
        Some(GeoMeta {
            coord,
            category: s.category,
        })
    } else {
        None
    };
    Ok(raster.with_geo(geo))
}

/// Writes the raster, and its sidecar when it carries coordinates.
pub fn write_msr(r: &Raster<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_file(path, &encode_msr(r))?;
    if let Some(g) = &r.geo {
        g.coord.validate()?;
        let s = Sidecar {
            lat: g.coord.lat,
            lon: g.coord.lon,
            category: g.category.clone(),
        };
        write_file(&sidecar_path(path), serde_json::to_string_pretty(&s)?.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn header_layout() {
        let r = Raster::from_vec(1, 1, 2, vec![1.0f32, -2.5]).unwrap();
        let b = encode_msr(&r);
        assert_eq!(&b[..4], b"MSR1");
        assert_eq!(&b[4..16], &[1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&b[16..20], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 24);
    }

    #[test]
    fn bytes_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = Raster::from_fn(3, 5, 7, |_, _, _| rng.gen::<f32>() * 1e3 - 5e2);
        let b = encode_msr(&r);
        let back = decode_msr(&b).unwrap();
        assert_eq!(back, r);
        assert_eq!(encode_msr(&back), b);
    }

    #[test]
    fn distinct_errors() {
        let r = Raster::from_vec(2, 2, 2, vec![0.5f32; 8]).unwrap();
        let b = encode_msr(&r);
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(decode_msr(&bad), Err(Error::BadMagic { .. })));
        match decode_msr(&b[..b.len() - 3]) {
            Err(e @ Error::TruncatedPayload { expected: 32, actual: 29 }) => {
                assert!(e.to_string().contains("truncated payload"));
                assert!(e.to_string().contains("32") && e.to_string().contains("29"));
            }
            other => panic!("{other:?}"),
        }
        let mut zero = b.clone();
        zero[4..8].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_msr(&zero), Err(Error::Range(_))));
        let mut long = b.clone();
        long.push(0);
        assert!(matches!(decode_msr(&long), Err(Error::Format(_))));
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.msr");
        let r = Raster::from_vec(1, 2, 2, vec![0.0f32, 1.0, 2.0, 3.0]).unwrap();
        write_msr(&r, &path).unwrap();
        assert!(!sidecar_path(&path).exists());
        assert_eq!(read_msr(&path).unwrap().geo, None);

        let g = GeoMeta {
            coord: GeoCoord::new(12.5, -70.25).unwrap(),
            category: Some("farm".into()),
        };
        let r = r.with_geo(Some(g.clone()));
        write_msr(&r, &path).unwrap();
        assert_eq!(sidecar_path(&path), dir.path().join("a.geo.json"));
        assert_eq!(read_msr(&path).unwrap().geo, Some(g));

        fs::write(sidecar_path(&path), r#"{"lat": 95.0, "lon": 0.0}"#).unwrap();
        assert!(matches!(read_msr(&path), Err(Error::Range(_))));
    }
}
