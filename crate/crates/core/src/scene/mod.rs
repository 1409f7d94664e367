//! Synthetic turntable scenes: shapes, materials, cameras, lights, and the
//! renderer that produces the photometric image stacks.

pub mod brdf;
pub mod camera;
pub mod rig;
pub mod shape;
pub mod simulate;
pub mod trace;

pub use brdf::{Albedo, Brdf, Material};
pub use camera::{intersect_sphere, Camera, Ray};
pub use rig::{build_rig, RigConfig, ViewSetup};
pub use shape::Shape;
pub use simulate::{render_view, RenderedView, SceneSpec};
pub use trace::{sphere_trace, TraceResult};
