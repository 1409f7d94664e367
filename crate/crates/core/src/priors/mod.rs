//! Depth and normal oracles plus the uncertainty gates that decide where
//! each prior may supervise the reconstruction.

pub mod gate;
pub mod mvs;
pub mod ps;

pub use gate::{compute_gates, lift_gated_pixels, GateConfig, GatedPixel, Gates};
pub use mvs::{blend_hypotheses, mvs_prior, DepthHypotheses, MvsConfig, MvsPrior};
pub use ps::{ensemble_statistics, ps_prior, PsConfig, PsPrior, PS_INVALID_VARIANCE};
