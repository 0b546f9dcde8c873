//! Masked autoencoder over wavelet components.

pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod loss;
pub mod net;
pub mod params;

pub use config::{DecoderConfig, EncoderConfig, ModelConfig, ModelSize};
pub use loss::{loss_cmp, loss_rec, loss_total, LossTerms};
pub use net::{EncoderOutput, ForwardOutput, Model};
pub use params::ParamStore;
pub use checkpoint::{load_checkpoint, save_checkpoint, ModelState, Moments};
