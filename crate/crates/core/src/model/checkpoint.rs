//! Versioned binary checkpoint of a [`ModelState`].
//!
//! Layout (little-endian): `WMCK`, `u32` version, config JSON as a
//! length-prefixed string, `u32` tensor count, then per tensor its name,
//! `u32` rank, `u32` dims and `f32` values. A flag byte announces the two
//! optimizer moment payloads (same shapes and order). The trailer holds the
//! `u64` step count and the generator state (32-byte seed, `u64` stream,
//! `u128` word position).

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::io::binary::{put_f32s, put_string, put_u32, Reader};
use crate::tensor::Tensor;

use super::config::ModelConfig;
use super::net::Model;
use super::params::ParamStore;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"WMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// First and second moment estimates, one pair per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Moments {
    pub fn zeros(params: &ParamStore) -> Self {
        let z: Vec<Tensor> = params
            .iter()
            .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
            .collect();
        Self { m: z.clone(), v: z }
    }
}

/// Everything a run needs to continue: parameters, optimizer moments, step
/// count and the data-order generator.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub model: Model,
    pub moments: Option<Moments>,
    pub step: u64,
    pub rng: ChaCha8Rng,
}

impl ModelState {
    pub fn new(model: Model, seed: u64) -> Self {
        Self {
            model,
            moments: None,
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

fn put_tensor_values(out: &mut Vec<u8>, t: &Tensor) {
    put_f32s(out, t.data().iter().map(|&v| v as f32));
}

pub fn encode_checkpoint(s: &ModelState) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_string(&mut out, &serde_json::to_string(&s.model.config)?);
    let params = &s.model.params;
    put_u32(&mut out, params.len() as u32);
    for p in params.iter() {
        put_string(&mut out, &p.name);
        put_u32(&mut out, 2);
        put_u32(&mut out, p.value.rows() as u32);
        put_u32(&mut out, p.value.cols() as u32);
        put_tensor_values(&mut out, &p.value);
    }
    match &s.moments {
        Some(m) => {
            out.push(1);
            for t in m.m.iter().chain(&m.v) {
                put_tensor_values(&mut out, t);
            }
        }
        None => out.push(0),
    }
    out.extend_from_slice(&s.step.to_le_bytes());
    out.extend_from_slice(&s.rng.get_seed());
    out.extend_from_slice(&s.rng.get_stream().to_le_bytes());
    out.extend_from_slice(&s.rng.get_word_pos().to_le_bytes());
    Ok(out)
}

fn read_values(rd: &mut Reader, rows: usize, cols: usize) -> Result<Tensor> {
    let v = rd.f32s(rows * cols)?;
    Tensor::from_vec(rows, cols, v.into_iter().map(f64::from).collect())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelState> {
    let mut rd = Reader::new(bytes);
    rd.magic(CHECKPOINT_MAGIC)?;
    let version = rd.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let config: ModelConfig = serde_json::from_str(&rd.string()?)?;
    let n = rd.u32()? as usize;
    let mut params = ParamStore::new();
    let mut shapes = Vec::with_capacity(n);
    for _ in 0..n {
        let name = rd.string()?;
        let rank = rd.u32()?;
        if rank != 2 {
            return Err(Error::Format(format!("{name}: rank {rank} tensors are not supported")));
        }
        let rows = rd.u32()? as usize;
        let cols = rd.u32()? as usize;
        shapes.push((rows, cols));
        params.insert(name, read_values(&mut rd, rows, cols)?);
    }
    let moments = match rd.u8()? {
        0 => None,
        1 => {
            let mut all = Vec::with_capacity(2 * n);
            for k in 0..2 * n {
                let (r, c) = shapes[k % n];
                all.push(read_values(&mut rd, r, c)?);
            }
            let v = all.split_off(n);
            Some(Moments { m: all, v })
        }
        f => return Err(Error::Format(format!("moment flag {f}"))),
    };
    let step = rd.u64()?;
    let seed: [u8; 32] = rd.take(32)?.try_into().expect("32 bytes");
    let stream = rd.u64()?;
    let word_pos = rd.u128()?;
    rd.finish()?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    Ok(ModelState {
        model: Model::from_params(config, params)?,
        moments,
        step,
        rng,
    })
}

pub fn save_checkpoint(s: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    crate::io::msr::write_file(path.as_ref(), &encode_checkpoint(s)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelState> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
