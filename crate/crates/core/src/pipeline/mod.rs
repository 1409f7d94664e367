//! End-to-end orchestration: configuration, seed fan-out, and the six
//! filesystem-driven stages (simulate, priors, reconstruct, evaluate,
//! ablate, profile).

pub mod config;
pub mod stages;

pub use config::{material_preset, shape_preset, EvalConfig, RunConfig};
pub use stages::{
    analytic_mesh, evaluate_against_shape, extract_mesh, init_threads, mesh_from_checkpoint,
    run_ablate, run_evaluate, run_priors, run_profile, run_reconstruct, run_simulate,
    standard_variants, tsdf_baseline, MeshSource, ReconArtifacts, ReportFile, SimulateSummary,
    ABLATION_HEADER, CHAMFER_CONVENTION,
};
