//! The six pipeline stages behind the command-line interface.
//!
//! Stages communicate through the filesystem only: each loads what the
//! previous stage wrote, validates it, and leaves a `run_config.json` beside
//! its outputs so every directory is self-describing. Report files never
//! embed the output root, so two runs of the same seed into different roots
//! produce byte-identical meshes, logs, and reports.

use crate::error::{Error, Result};
use crate::fields::checkpoint::{load_checkpoint, rebuild_pair};
use crate::fields::net::FieldPair;
use crate::io::dataset::{
    load_dataset, load_priors, write_dataset, write_json, write_priors, LoadedDataset,
    LoadedPriors, LoadedView, PriorsMeta, ViewPriors, FORMAT_VERSION,
};
use crate::mesh::marching::{marching_cubes, GridSpec, NeuralSdf};
use crate::mesh::metrics::{evaluate_point_sets, EvalReport};
use crate::mesh::profile::{surface_profile, write_profile_csv, Plane, Polyline};
use crate::mesh::trimesh::TriMesh;
use crate::mesh::tsdf::{tsdf_fuse, TsdfView};
use crate::pipeline::config::RunConfig;
use crate::priors::gate::{compute_gates, Gates};
use crate::priors::mvs::mvs_prior;
use crate::priors::ps::ps_prior;
use crate::scene::rig::{build_rig, ViewSetup};
use crate::scene::shape::Shape;
use crate::scene::simulate::{render_view, RenderedView};
use crate::seed;
use crate::train::batch::TrainView;
use crate::train::config::{AblationFlags, TrainConfig};
use crate::train::trainer::{choose_light_index, train, TrainResult};
use crate::{ParamSetS, S};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// Caps rayon's worker count from the `MVPS_THREADS` environment variable.
/// Call once at process start; later calls cannot resize the global pool.
pub fn init_threads() {
    let Ok(raw) = std::env::var("MVPS_THREADS") else {
        return;
    };
    match raw.parse::<usize>() {
        Ok(n) if n > 0 => {
            if rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .is_err()
            {
                log::warn!("thread pool already initialized; MVPS_THREADS ignored");
            }
        }
        _ => log::warn!("MVPS_THREADS='{raw}' is not a positive integer; ignored"),
    }
}

/// Writes the configuration that produced a stage directory, with the
/// optimizer settings resolved to what was actually used.
fn write_stage_config(dir: &Path, cfg: &RunConfig, train: &TrainConfig) -> Result<()> {
    let resolved = RunConfig {
        train: train.clone(),
        ..cfg.clone()
    };
    write_json(&dir.join("run_config.json"), &resolved)
}

#[derive(Clone, Debug)]
pub struct SimulateSummary {
    pub dir: PathBuf,
    pub views: usize,
    pub lights: usize,
    /// Rays that exhausted the tracing step budget, summed over views.
    pub max_step_rays: usize,
}

/// Renders the configured scene from every rig viewpoint and writes the
/// dataset directory.
pub fn run_simulate(cfg: &RunConfig) -> Result<SimulateSummary> {
    cfg.validate()?;
    let setups = build_rig(&cfg.rig, cfg.scene.shape.bounding_radius())?;
    let sim_seed = cfg.stage_seed("simulate");
    let rendered: Vec<RenderedView> = setups
        .par_iter()
        .enumerate()
        .map(|(i, v)| render_view(&cfg.scene, v, seed::derive_indexed(sim_seed, "view", i as u64)))
        .collect();
    let max_step_rays: usize = rendered.iter().map(|r| r.max_step_rays).sum();
    if max_step_rays > 0 {
        log::warn!("{max_step_rays} rays exhausted the tracing step budget");
    }
    let dir = cfg.dataset_dir();
    write_dataset(&dir, &cfg.scene, &cfg.rig, &setups, &rendered)?;
    write_stage_config(&dir, cfg, &cfg.resolved_train())?;
    Ok(SimulateSummary {
        dir,
        views: setups.len(),
        lights: cfg.rig.lights,
        max_step_rays,
    })
}

/// Reassembles the simulator's output type from a loaded view so the prior
/// oracles can run on datasets read back from disk.
fn rendered_from_loaded(lv: LoadedView) -> (ViewSetup, RenderedView) {
    (
        lv.setup,
        RenderedView {
            images: lv.images,
            median: lv.median,
            mask: lv.mask,
            depth: lv.gt_depth,
            normal: lv.gt_normal,
            max_step_rays: 0,
        },
    )
}

/// Runs both prior oracles and the gates on a previously simulated dataset.
/// The material comes from the dataset's own metadata, not the current
/// configuration, so the oracle sees what was actually imaged.
pub fn run_priors(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let data = load_dataset(&cfg.dataset_dir())?;
    let glossy = data.meta.scene.material.is_glossy();
    let priors_seed = cfg.stage_seed("priors");
    let results: Vec<Result<ViewPriors>> = data
        .views
        .into_par_iter()
        .enumerate()
        .map(|(i, lv)| {
            let (setup, rv) = rendered_from_loaded(lv);
            let mvs = mvs_prior(
                &rv,
                glossy,
                &cfg.mvs,
                seed::derive_indexed(priors_seed, "mvs", i as u64),
            );
            let ps = ps_prior(
                &rv,
                &setup,
                &cfg.ps,
                seed::derive_indexed(priors_seed, "ps", i as u64),
            )?;
            let gates = compute_gates(&mvs, &ps, &rv.mask, &cfg.gate);
            Ok(ViewPriors {
                depth: mvs.depth,
                confidence: mvs.confidence,
                normal: ps.normal,
                variance: ps.variance,
                gate_mvs: gates.mvs,
                gate_ps: gates.ps,
            })
        })
        .collect();
    let views = results.into_iter().collect::<Result<Vec<_>>>()?;
    let dir = cfg.priors_dir();
    let meta = PriorsMeta {
        format_version: FORMAT_VERSION,
        views: views.len(),
        mvs: cfg.mvs,
        ps: cfg.ps,
        gate: cfg.gate,
        seed: priors_seed,
    };
    write_priors(&dir, &meta, &views)?;
    write_stage_config(&dir, cfg, &cfg.resolved_train())?;
    Ok(dir)
}

/// Joins dataset and priors into the trainer's per-view bundles, supervising
/// photometry with the single seeded light.
fn assemble_train_views(
    data: &LoadedDataset,
    priors: &LoadedPriors,
    light: usize,
) -> Result<Vec<TrainView>> {
    if data.views.len() != priors.views.len() {
        return Err(Error::Config(format!(
            "dataset has {} views but the priors cover {}",
            data.views.len(),
            priors.views.len()
        )));
    }
    Ok(data
        .views
        .iter()
        .zip(&priors.views)
        .map(|(lv, vp)| TrainView {
            camera: lv.setup.camera.clone(),
            target: lv.images[light].clone(),
            mask: lv.mask.clone(),
            gates: Gates {
                mvs: vp.gate_mvs.clone(),
                ps: vp.gate_ps.clone(),
            },
            prior_depth: vp.depth.clone(),
            prior_normal: vp.normal.clone(),
        })
        .collect())
}

/// Extracts the zero level set of a trained field over the sampling cube.
pub fn extract_mesh(pair: &FieldPair, set: &ParamSetS, res: usize, half: S) -> Result<TriMesh> {
    let field = NeuralSdf { pair, set };
    marching_cubes(&field, &GridSpec::cube(half, res))
}

/// Loads a checkpoint and extracts its surface.
pub fn mesh_from_checkpoint(path: &Path, res: usize, half: S) -> Result<TriMesh> {
    let (field_cfg, params) = load_checkpoint::<S>(path)?;
    let pair = rebuild_pair(&field_cfg, &params)?;
    extract_mesh(&pair, &params, res, half)
}

/// Trains into `dir` with the given optimizer settings, resuming from any
/// checkpoint already there, then writes the extracted mesh.
fn reconstruct_into(
    cfg: &RunConfig,
    dir: &Path,
    train_cfg: &TrainConfig,
) -> Result<(TriMesh, TrainResult)> {
    let data = load_dataset(&cfg.dataset_dir())?;
    let priors = load_priors(&cfg.priors_dir())?;
    let light = choose_light_index(train_cfg.seed, data.meta.lights);
    let views = assemble_train_views(&data, &priors, light)?;
    drop(data);
    drop(priors);

    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_stage_config(dir, cfg, train_cfg)?;
    let ckpt = dir.join("checkpoint.bin");
    let resume = if ckpt.exists() {
        let (field_cfg, params) = load_checkpoint::<S>(&ckpt)?;
        let pair = rebuild_pair(&field_cfg, &params)?;
        log::info!(
            "resuming from {} at step {}",
            ckpt.display(),
            params.adam_step_count()
        );
        Some((pair, params))
    } else {
        None
    };
    let result = train(
        &views,
        &cfg.field,
        train_cfg,
        resume,
        Some(&dir.join("train_log.csv")),
        Some(&ckpt),
    )?;
    let mesh = extract_mesh(
        &result.pair,
        &result.params,
        cfg.eval.grid_res,
        cfg.train.sample.sphere_radius,
    )?;
    mesh.write_obj(&dir.join("recon_mesh.obj"))?;
    Ok((mesh, result))
}

pub struct ReconArtifacts {
    pub dir: PathBuf,
    pub mesh: TriMesh,
    pub light_index: usize,
    pub result: TrainResult,
}

/// Trains the configured variant on the simulated dataset and priors, then
/// extracts and writes the surface.
pub fn run_reconstruct(cfg: &RunConfig) -> Result<ReconArtifacts> {
    cfg.validate()?;
    let train_cfg = cfg.resolved_train();
    let dir = cfg.recon_dir();
    let (mesh, result) = reconstruct_into(cfg, &dir, &train_cfg)?;
    Ok(ReconArtifacts {
        dir,
        mesh,
        light_index: choose_light_index(train_cfg.seed, cfg.rig.lights),
        result,
    })
}

/// Where the mesh under evaluation comes from.
#[derive(Clone, Debug)]
pub enum MeshSource {
    /// `recon/recon_mesh.obj` under the configured output root.
    ReconDir,
    Mesh(PathBuf),
    Checkpoint(PathBuf),
}

/// Loads the mesh a source points at, with a root-independent label for
/// reports.
fn load_mesh(cfg: &RunConfig, source: &MeshSource) -> Result<(TriMesh, String)> {
    match source {
        MeshSource::ReconDir => {
            let path = cfg.recon_dir().join("recon_mesh.obj");
            Ok((TriMesh::read_obj(&path)?, "recon/recon_mesh.obj".into()))
        }
        MeshSource::Mesh(p) => Ok((TriMesh::read_obj(p)?, p.display().to_string())),
        MeshSource::Checkpoint(p) => Ok((
            mesh_from_checkpoint(p, cfg.eval.grid_res, cfg.train.sample.sphere_radius)?,
            p.display().to_string(),
        )),
    }
}

/// Extracts the analytic shape's surface at the reference resolution.
pub fn analytic_mesh(shape: &Shape, res: usize, half: S) -> Result<TriMesh> {
    marching_cubes(shape, &GridSpec::cube(half, res))
}

/// A record of how the distance convention reads, stamped into every report.
pub const CHAMFER_CONVENTION: &str = "chamfer_l2 = mean over A of squared nearest distance to B \
    + mean over B of squared nearest distance to A";

/// Compares a mesh against the analytic shape by area-uniform sampling.
pub fn evaluate_against_shape(
    shape: &Shape,
    mesh: &TriMesh,
    eval: &crate::pipeline::config::EvalConfig,
    half: S,
    eval_seed: u64,
) -> Result<EvalReport> {
    let gt = analytic_mesh(shape, eval.gt_grid_res, half)?;
    let a = mesh.sample_surface(eval.samples, seed::derive_indexed(eval_seed, "sample", 0))?;
    let b = gt.sample_surface(eval.samples, seed::derive_indexed(eval_seed, "sample", 1))?;
    evaluate_point_sets(&a, &b, eval.resolved_tau(shape.bounding_radius()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub format_version: u32,
    pub convention: String,
    /// Root-independent description of the evaluated mesh.
    pub mesh: String,
    /// Description of the reference surface.
    pub reference: String,
    pub report: EvalReport,
}

/// Writes the machine-readable, tabular, and human-readable forms of one
/// evaluation into `dir`.
fn write_report(dir: &Path, label: &str, reference: &str, report: &EvalReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let file = ReportFile {
        format_version: FORMAT_VERSION,
        convention: CHAMFER_CONVENTION.into(),
        mesh: label.into(),
        reference: reference.into(),
        report: *report,
    };
    write_json(&dir.join("report.json"), &file)?;

    let csv_path = dir.join("report.csv");
    let mut csv = String::new();
    csv.push_str(&format!("# {CHAMFER_CONVENTION}\n"));
    csv.push_str("mesh,chamfer_l2,fscore,precision,recall,tau,n_a,n_b\n");
    csv.push_str(&format!(
        "{label},{},{},{},{},{},{},{}\n",
        report.chamfer_l2,
        report.fscore,
        report.precision,
        report.recall,
        report.tau,
        report.n_a,
        report.n_b
    ));
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;

    let txt_path = dir.join("report.txt");
    let text = format!(
        "evaluation of {label} against {reference}\n\
         convention: {CHAMFER_CONVENTION}\n\
         chamfer_l2: {}\n\
         fscore:     {} (tau = {})\n\
         precision:  {}\n\
         recall:     {}\n\
         samples:    {} vs {}\n",
        report.chamfer_l2,
        report.fscore,
        report.tau,
        report.precision,
        report.recall,
        report.n_a,
        report.n_b
    );
    std::fs::write(&txt_path, text).map_err(|e| Error::io(&txt_path, e))?;
    Ok(())
}

fn shape_label(shape: &Shape) -> String {
    format!("analytic {shape:?}")
}

/// Evaluates a reconstructed mesh against the configured scene's analytic
/// surface and writes `report.{json,csv,txt}` under the output root.
pub fn run_evaluate(cfg: &RunConfig, source: &MeshSource) -> Result<EvalReport> {
    cfg.validate()?;
    let (mesh, label) = load_mesh(cfg, source)?;
    let report = evaluate_against_shape(
        &cfg.scene.shape,
        &mesh,
        &cfg.eval,
        cfg.train.sample.sphere_radius,
        cfg.stage_seed("evaluate"),
    )?;
    let dir = cfg.eval_dir();
    write_report(&dir, &label, &shape_label(&cfg.scene.shape), &report)?;
    write_stage_config(&dir, cfg, &cfg.resolved_train())?;
    Ok(report)
}

pub const ABLATION_HEADER: &str = "variant,chamfer_l2,fscore,precision,recall,tau";

/// The loss variants mirrored by the ablation study: the full objective and
/// the four single-switch reductions.
pub fn standard_variants() -> Vec<AblationFlags> {
    let mut v = vec![AblationFlags::default()];
    v.push(AblationFlags {
        no_mvs: true,
        ..Default::default()
    });
    v.push(AblationFlags {
        no_ps: true,
        ..Default::default()
    });
    v.push(AblationFlags {
        no_render: true,
        ..Default::default()
    });
    v.push(AblationFlags {
        no_uncertainty: true,
        ..Default::default()
    });
    v
}

fn append_ablation_row(path: &Path, tag: &str, report: &EvalReport) -> Result<()> {
    let fresh = !path.exists();
    let mut file = File::options()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    if fresh {
        writeln!(file, "{ABLATION_HEADER}").map_err(|e| Error::io(path, e))?;
    }
    writeln!(
        file,
        "{tag},{},{},{},{},{}",
        report.chamfer_l2, report.fscore, report.precision, report.recall, report.tau
    )
    .map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Trains and evaluates each requested loss variant. All variants share the
/// reconstruct stage's seed so they differ only in their objective. Each
/// variant gets its own directory; a summary row per variant is appended to
/// `ablation.csv`.
pub fn run_ablate(
    cfg: &RunConfig,
    variants: &[AblationFlags],
) -> Result<Vec<(String, EvalReport)>> {
    cfg.validate()?;
    if variants.is_empty() {
        return Err(Error::Config("no ablation variants requested".into()));
    }
    let base = cfg.ablate_dir();
    std::fs::create_dir_all(&base).map_err(|e| Error::io(&base, e))?;
    write_stage_config(&base, cfg, &cfg.resolved_train())?;
    let csv = base.join("ablation.csv");
    let mut out = Vec::with_capacity(variants.len());
    for flags in variants {
        let tag = flags.tag();
        let dir = base.join(&tag);
        let train_cfg = TrainConfig {
            ablation: *flags,
            ..cfg.resolved_train()
        };
        log::info!("ablation variant '{tag}'");
        let (mesh, _) = reconstruct_into(cfg, &dir, &train_cfg)?;
        let report = evaluate_against_shape(
            &cfg.scene.shape,
            &mesh,
            &cfg.eval,
            cfg.train.sample.sphere_radius,
            cfg.stage_seed("evaluate"),
        )?;
        write_report(&dir, &tag, &shape_label(&cfg.scene.shape), &report)?;
        append_ablation_row(&csv, &tag, &report)?;
        out.push((tag, report));
    }
    Ok(out)
}

/// Intersects a reconstructed mesh with a plane and writes the chained
/// section curves as CSV.
pub fn run_profile(
    cfg: &RunConfig,
    source: &MeshSource,
    plane: &Plane,
) -> Result<Vec<Polyline>> {
    cfg.validate()?;
    let (mesh, label) = load_mesh(cfg, source)?;
    let lines = surface_profile(&mesh, plane)?;
    if lines.is_empty() {
        log::warn!("the plane misses {label}; writing an empty profile");
    }
    let dir = cfg.profile_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_profile_csv(&dir.join("profile.csv"), &lines)?;
    write_stage_config(&dir, cfg, &cfg.resolved_train())?;
    Ok(lines)
}

/// Classical depth-map fusion over the stereo prior, the non-learned
/// baseline the trained reconstruction is compared against. Truncation
/// defaults to four voxels.
pub fn tsdf_baseline(cfg: &RunConfig, truncation: Option<S>) -> Result<TriMesh> {
    cfg.validate()?;
    let data = load_dataset(&cfg.dataset_dir())?;
    let priors = load_priors(&cfg.priors_dir())?;
    if data.views.len() != priors.views.len() {
        return Err(Error::Config(format!(
            "dataset has {} views but the priors cover {}",
            data.views.len(),
            priors.views.len()
        )));
    }
    let half = cfg.train.sample.sphere_radius;
    let grid = GridSpec::cube(half, cfg.eval.grid_res);
    let voxel = 2.0 * half / cfg.eval.grid_res as S;
    let trunc = truncation.unwrap_or(4.0 * voxel);
    let views: Vec<TsdfView> = data
        .views
        .iter()
        .zip(&priors.views)
        .map(|(lv, vp)| TsdfView {
            camera: &lv.setup.camera,
            depth: &vp.depth,
            confidence: &vp.confidence,
        })
        .collect();
    tsdf_fuse(&views, &grid, trunc)
}
