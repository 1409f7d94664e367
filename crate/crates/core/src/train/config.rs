//! Training hyperparameters and ablation switches.

use crate::error::{Error, Result};
use crate::render::sampling::SampleConfig;
use crate::S;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    /// Drop the depth-prior term.
    pub no_mvs: bool,
    /// Drop the normal-prior term.
    pub no_ps: bool,
    /// Drop the photometric rendering term.
    pub no_render: bool,
    /// Treat every masked pixel as fully trusted and render everywhere.
    pub no_uncertainty: bool,
}

impl AblationFlags {
    /// Short tag naming the active flags, used in output paths.
    pub fn tag(&self) -> String {
        let mut parts = Vec::new();
        if self.no_mvs {
            parts.push("no_mvs");
        }
        if self.no_ps {
            parts.push("no_ps");
        }
        if self.no_render {
            parts.push("no_render");
        }
        if self.no_uncertainty {
            parts.push("no_uncertainty");
        }
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join("-")
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: u64,
    /// Rays drawn from each view per epoch.
    pub rays_per_view: usize,
    pub lr: S,
    /// Weight of the silhouette cross-entropy term.
    pub lambda_mask: S,
    /// Weight of the unit-gradient penalty.
    pub lambda_eikonal: S,
    /// Fresh uniform points in the bounding box added to the unit-gradient
    /// penalty each epoch.
    pub eikonal_samples: usize,
    pub ablation: AblationFlags,
    pub seed: u64,
    /// Epochs between rolling checkpoint writes.
    pub checkpoint_interval: u64,
    pub sample: SampleConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            rays_per_view: 1024,
            lr: 1e-4,
            lambda_mask: 0.1,
            lambda_eikonal: 1.0,
            eikonal_samples: 256,
            ablation: AblationFlags::default(),
            seed: 0,
            checkpoint_interval: 500,
            sample: SampleConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_mask < 0.0 || self.lambda_eikonal < 0.0 {
            return Err(Error::Config(
                "loss term weights must be non-negative".into(),
            ));
        }
        if self.rays_per_view == 0 {
            return Err(Error::Config("rays_per_view must be positive".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.sample.coarse < 2 {
            return Err(Error::Config(
                "at least two coarse samples per ray are required".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_tags_name_active_switches() {
        assert_eq!(AblationFlags::default().tag(), "full");
        let f = AblationFlags {
            no_mvs: true,
            no_render: true,
            ..Default::default()
        };
        assert_eq!(f.tag(), "no_mvs-no_render");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = TrainConfig::default();
        c.lambda_mask = -0.1;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.rays_per_view = 0;
        assert!(c.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
