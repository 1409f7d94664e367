//! Surface extraction, mesh handling, and geometric comparison.

pub mod marching;
pub mod metrics;
pub mod profile;
pub mod tables;
pub mod trimesh;
pub mod tsdf;

pub use marching::{marching_cubes, GridSpec, NeuralSdf, ScalarField3};
pub use metrics::{
    chamfer_l2, chamfer_l2_brute, default_tau, evaluate_point_sets, fscore, fscore_brute,
    EvalReport,
};
pub use profile::{surface_profile, write_profile_csv, Plane, Polyline};
pub use trimesh::TriMesh;
pub use tsdf::{tsdf_fuse, GridField, TsdfView};
