//! Wavelet-domain masked autoencoder for multispectral rasters.
//!
//! The pipeline decomposes an image with a multi-level Haar transform, embeds
//! every subband onto a shared token grid, hides whole cross-scale tubes of
//! tokens, encodes the rest with a transformer conditioned on the image's
//! geolocation through spherical harmonics, and reconstructs the hidden
//! subbands with a per-level decoder.

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod geo;
pub mod io;
pub mod model;
pub mod raster;
pub mod tensor;
pub mod tokenizer;
pub mod training;
pub mod wavelet;

pub use error::{Error, Result};
pub use raster::{GeoMeta, Raster, Real};
pub use tensor::Tensor;
