//! Multi-view photometric stereo surface reconstruction.
//!
//! The crate covers the full pipeline: a synthetic turntable simulator that
//! renders multi-light images of analytic SDF scenes, oracle generators for
//! multi-view stereo depth and photometric stereo normals with per-pixel
//! uncertainty, a neural signed distance field plus radiance field trained by
//! differentiable volume rendering with uncertainty-gated prior fusion, and
//! mesh extraction with geometric evaluation metrics.
//!
//! Numeric modules are generic over [`scalar::Real`] (f32/f64); the pipeline
//! layers run everything at `f64`. Concrete aliases for the default scalar
//! are exported below.

pub mod autodiff;
pub mod error;
pub mod fields;
pub mod img;
pub mod io;
pub mod mesh;
pub mod pipeline;
pub mod priors;
pub mod render;
pub mod scene;
pub mod seed;
pub mod train;
pub mod mat;
pub mod math;
pub mod scalar;

pub use error::{Error, Result};

/// Default scalar type of the pipeline.
pub type S = f64;
/// 3-vector at the default scalar.
pub type Vec3 = math::Vec3<S>;
/// 3x3 matrix at the default scalar.
pub type Mat3 = math::Mat3<S>;
/// Dense matrix at the default scalar.
pub type MatS = mat::Mat<S>;
/// Autodiff tape at the default scalar.
pub type TapeS = autodiff::Tape<S>;
/// Parameter set at the default scalar.
pub type ParamSetS = autodiff::ParamSet<S>;
