//! File formats and artifact layout: float maps, graymaps, and the dataset
//! and prior directory schemas.

pub mod dataset;
pub mod pfm;
pub mod pgm;

pub use dataset::{
    load_dataset, load_priors, read_json, view_dir, write_dataset, write_json, write_priors,
    CameraRecord, CamerasFile, LoadedDataset, LoadedPriors, LoadedView, MetaFile, PriorsMeta,
    ViewPriors, CAMERA_CONVENTION, FORMAT_VERSION,
};
pub use pfm::{read_pfm, write_pfm};
pub use pgm::{read_pgm, write_pgm};
