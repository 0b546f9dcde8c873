//! Run configuration document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::{SynthSpec, TrainConfig};

/// Everything a run reads. Unknown keys are rejected; [`RunConfig::resolved`]
/// fills in the model section so that the echoed file is complete.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    /// Explicit architecture; when absent it comes from `train.model_size`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.train.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Fills the model section for `c x h x w` inputs and checks consistency.
    pub fn resolved(&self, c: usize, h: usize, w: usize) -> Result<Self> {
        self.train.validate()?;
        let model = match &self.model {
            Some(m) => m.clone(),
            None => {
                let mut m = ModelConfig::preset(self.train.model_size, c, h, w);
                m.levels = self.train.levels;
                m
            }
        };
        if model.levels != self.train.levels {
            return Err(Error::Config(format!(
                "model has {} levels, training requests {}",
                model.levels, self.train.levels
            )));
        }
        if (model.channels, model.height, model.width) != (c, h, w) {
            return Err(Error::Config(format!(
                "model input {:?} does not match data {:?}",
                (model.channels, model.height, model.width),
                (c, h, w)
            )));
        }
        model.validate()?;
        Ok(Self {
            train: self.train.clone(),
            synth: self.synth.clone(),
            model: Some(model),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_echoed() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c.train.lr, 1e-4);
        assert_eq!(c.train.weight_decay, 0.05);
        assert_eq!(c.train.mask_ratio, 0.75);
        assert_eq!(c.train.levels, 4);
        let r = c.resolved(4, 64, 64).unwrap();
        let echo = r.to_json().unwrap();
        assert!(echo.contains("\"mask_ratio\": 0.75"));
        assert_eq!(RunConfig::from_json(&echo).unwrap(), r);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_json(r#"{"trian": {}}"#), Err(Error::Json(_))));
        assert!(RunConfig::from_json(r#"{"train": {"lr": 1e-3, "foo": 1}}"#).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        for bad in [r#"{"train": {"mask_ratio": 0.0}}"#, r#"{"train": {"epochs": 0}}"#] {
            assert!(matches!(RunConfig::from_json(bad), Err(Error::Config(_))), "{bad}");
        }
        let mut c = RunConfig::default();
        c.train.levels = 3;
        c.model = Some(ModelConfig::tiny(4, 64, 64));
        assert!(c.resolved(4, 64, 64).is_ok());
        assert!(c.resolved(4, 32, 64).is_err());
        c.train.levels = 2;
        assert!(c.resolved(4, 64, 64).is_err());
    }
}
