use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::DEFAULT_SH_CUTOFF;
use crate::tokenizer::PatchConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSize {
    Tiny,
    Small,
    Base,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_dim: usize,
}

impl EncoderConfig {
    pub const BASE: Self = Self {
        depth: 12,
        dim: 768,
        heads: 12,
        mlp_dim: 3072,
    };
    pub const SMALL: Self = Self {
        depth: 6,
        dim: 384,
        heads: 6,
        mlp_dim: 1536,
    };
    pub const TINY: Self = Self {
        depth: 2,
        dim: 64,
        heads: 4,
        mlp_dim: 128,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_dim: usize,
}

impl DecoderConfig {
    pub const BASE: Self = Self {
        depth: 8,
        dim: 512,
        heads: 16,
        mlp_dim: 2048,
    };
    pub const TINY: Self = Self {
        depth: 2,
        dim: 32,
        heads: 4,
        mlp_dim: 64,
    };
}

/// Full architecture description. Echoed verbatim into checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Number of wavelet levels.
    pub levels: usize,
    /// Token footprint in original-image pixels.
    pub base_patch: usize,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    /// Spherical-harmonic degree cutoff `L`.
    #[serde(default = "default_sh_cutoff")]
    pub sh_cutoff: usize,
    #[serde(default = "default_true")]
    pub use_gpe: bool,
    #[serde(default = "default_beta")]
    pub smooth_l1_beta: f64,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    #[serde(default = "default_ln_eps")]
    pub layer_norm_eps: f64,
}

fn default_sh_cutoff() -> usize {
    DEFAULT_SH_CUTOFF
}
fn default_true() -> bool {
    true
}
fn default_beta() -> f64 {
    1.0
}
fn default_init_std() -> f64 {
    0.02
}
fn default_ln_eps() -> f64 {
    1e-6
}

impl ModelConfig {
    pub fn preset(size: ModelSize, channels: usize, height: usize, width: usize) -> Self {
        let (levels, encoder, decoder) = match size {
            ModelSize::Base => (4, EncoderConfig::BASE, DecoderConfig::BASE),
            ModelSize::Small => (4, EncoderConfig::SMALL, DecoderConfig::BASE),
            ModelSize::Tiny => (3, EncoderConfig::TINY, DecoderConfig::TINY),
        };
        Self {
            channels,
            height,
            width,
            levels,
            base_patch: 16,
            encoder,
            decoder,
            sh_cutoff: DEFAULT_SH_CUTOFF,
            use_gpe: true,
            smooth_l1_beta: 1.0,
            init_std: 0.02,
            layer_norm_eps: 1e-6,
        }
    }

    pub fn base() -> Self {
        Self::preset(ModelSize::Base, 13, 224, 224)
    }

    pub fn small() -> Self {
        Self::preset(ModelSize::Small, 13, 224, 224)
    }

    /// Desk-scale configuration used by the test suites.
    pub fn tiny(channels: usize, height: usize, width: usize) -> Self {
        Self::preset(ModelSize::Tiny, channels, height, width)
    }

    pub fn patch_config(&self) -> PatchConfig {
        PatchConfig {
            channels: self.channels,
            height: self.height,
            width: self.width,
            base_patch: self.base_patch,
            depth: self.levels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.patch_config().validate()?;
        for (name, dim, heads, depth, mlp) in [
            ("encoder", self.encoder.dim, self.encoder.heads, self.encoder.depth, self.encoder.mlp_dim),
            ("decoder", self.decoder.dim, self.decoder.heads, self.decoder.depth, self.decoder.mlp_dim),
        ] {
            if dim == 0 || heads == 0 || depth == 0 || mlp == 0 {
                return Err(Error::Config(format!("{name} sizes must be positive")));
            }
            if dim % heads != 0 {
                return Err(Error::Config(format!(
                    "{name} width {dim} not divisible by {heads} heads"
                )));
            }
            if dim % 2 != 0 {
                return Err(Error::Config(format!("{name} width {dim} must be even")));
            }
        }
        if self.sh_cutoff == 0 {
            return Err(Error::Config("sh_cutoff must be >= 1".into()));
        }
        if !(self.smooth_l1_beta > 0.0) || !(self.init_std > 0.0) || !(self.layer_norm_eps > 0.0) {
            return Err(Error::Config(
                "smooth_l1_beta, init_std and layer_norm_eps must be positive".into(),
            ));
        }
        Ok(())
    }

    /// 0-based encoder blocks whose outputs feed dense feature maps:
    /// `{3, 5, 7, 11}` for 12 blocks, scaled by `depth / 12` and floored
    /// otherwise.
    pub fn feature_layers(&self) -> Vec<usize> {
        let mut out: Vec<usize> = [3usize, 5, 7, 11]
            .iter()
            .map(|&k| k * self.encoder.depth / 12)
            .collect();
        out.dedup();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for cfg in [ModelConfig::base(), ModelConfig::small(), ModelConfig::tiny(4, 64, 64)] {
            cfg.validate().unwrap();
        }
        assert_eq!(ModelConfig::base().patch_config().sequence_len(), 2548);
    }

    #[test]
    fn feature_layer_subsets() {
        assert_eq!(ModelConfig::base().feature_layers(), vec![3, 5, 7, 11]);
        assert_eq!(ModelConfig::small().feature_layers(), vec![1, 2, 3, 5]);
        assert_eq!(ModelConfig::tiny(2, 32, 32).feature_layers(), vec![0, 1]);
    }

    #[test]
    fn rejects_bad_heads_and_unknown_keys() {
        let mut cfg = ModelConfig::tiny(2, 32, 32);
        cfg.encoder.heads = 5;
        assert!(cfg.validate().is_err());
        let mut json = serde_json::to_value(ModelConfig::tiny(2, 32, 32)).unwrap();
        json["bogus"] = serde_json::json!(1);
        assert!(serde_json::from_value::<ModelConfig>(json).is_err());
    }
}
