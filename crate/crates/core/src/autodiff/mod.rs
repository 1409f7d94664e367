//! Reverse-mode autodiff: tape, parameter storage, and Adam.

mod params;
mod tape;

pub use params::{central_diff_param, AdamConfig, ParamEntry, ParamId, ParamSet, TapeBinding};
pub use tape::{sigmoid_stable, softplus_stable, NodeId, Tape, TapeError};
