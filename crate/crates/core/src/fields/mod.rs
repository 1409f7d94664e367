//! Neural geometry and appearance fields: configuration, positional
//! encoding, the networks themselves, and checkpoint serialization.

pub mod checkpoint;
pub mod config;
pub mod encoding;
pub mod net;

pub use config::{Activation, FieldConfig};
pub use net::{FieldPair, RadianceNetwork, SdfEval, SdfNetwork, SdfTapeOut};
