//! Network architecture configuration.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// Scaled softplus `ln(1 + exp(s*x)) / s`; the sharpness `s` comes from
    /// [`FieldConfig::softplus_sharpness`].
    Softplus,
    Relu,
}

/// Shapes and activations of the SDF and radiance networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldConfig {
    /// Fourier octaves for positions; 0 passes raw coordinates through.
    pub pos_octaves: usize,
    /// Fourier octaves for view directions.
    pub dir_octaves: usize,
    /// Hidden layers in the SDF network.
    pub sdf_layers: usize,
    /// Units per hidden SDF layer.
    pub sdf_width: usize,
    /// Dimension of the geometry feature vector handed to the radiance
    /// network.
    pub feature_dim: usize,
    /// 1-based hidden layer whose input is concatenated with the encoded
    /// input; 0 disables the skip connection.
    pub skip_layer: usize,
    /// Hidden layers in the radiance network.
    pub radiance_layers: usize,
    /// Units per hidden radiance layer.
    pub radiance_width: usize,
    /// Sharpness of the softplus activation.
    pub softplus_sharpness: f64,
    pub sdf_activation: Activation,
    pub radiance_activation: Activation,
    /// Radius of the sphere the freshly initialized SDF approximates.
    pub geometric_init_radius: f64,
    /// Initial value of the density scale parameter beta; alpha starts at
    /// its reciprocal.
    pub beta_init: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            pos_octaves: 6,
            dir_octaves: 4,
            sdf_layers: 8,
            sdf_width: 256,
            feature_dim: 256,
            skip_layer: 4,
            radiance_layers: 4,
            radiance_width: 256,
            softplus_sharpness: 100.0,
            sdf_activation: Activation::Softplus,
            radiance_activation: Activation::Relu,
            geometric_init_radius: 0.75,
            beta_init: 0.1,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sdf_layers == 0 || self.radiance_layers == 0 {
            return Err(Error::Config("networks need at least one hidden layer".into()));
        }
        if self.sdf_width == 0 || self.radiance_width == 0 || self.feature_dim == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.skip_layer > self.sdf_layers {
            return Err(Error::Config(format!(
                "skip layer {} exceeds hidden layer count {}",
                self.skip_layer, self.sdf_layers
            )));
        }
        if self.skip_layer == 1 {
            return Err(Error::Config(
                "skip into the first hidden layer duplicates its input".into(),
            ));
        }
        if !(self.softplus_sharpness > 0.0) {
            return Err(Error::Config("softplus sharpness must be positive".into()));
        }
        if !(self.geometric_init_radius > 0.0) {
            return Err(Error::Config("geometric init radius must be positive".into()));
        }
        if !(self.beta_init > 0.0) {
            return Err(Error::Config("beta must start positive".into()));
        }
        Ok(())
    }

    /// A reduced architecture for CPU-budget runs; geometry capacity is
    /// enough for the smooth benchmark shapes while keeping a training epoch
    /// cheap.
    pub fn desk(geometric_init_radius: f64) -> Self {
        Self {
            pos_octaves: 4,
            dir_octaves: 2,
            sdf_layers: 4,
            sdf_width: 48,
            feature_dim: 48,
            skip_layer: 3,
            radiance_layers: 2,
            radiance_width: 48,
            geometric_init_radius,
            ..Self::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        FieldConfig::default().validate().unwrap();
    }

    #[test]
    fn bad_skip_layer_is_rejected() {
        let cfg = FieldConfig {
            skip_layer: 9,
            ..FieldConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
