//! Differentiable volume rendering: the distance-to-density transform,
//! quadrature sampling, and the batched renderer.

pub mod density;
pub mod renderer;
pub mod sampling;

pub use density::{cdf_raw, density_nodes, density_raw};
pub use renderer::{render_batch, render_batch_raw, RawRender, RenderNodes, RenderPlan};
pub use sampling::{plan_samples, RaySamples, SampleConfig};
