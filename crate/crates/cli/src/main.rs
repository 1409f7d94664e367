//! Command line front end for the reconstruction pipeline.
//!
//! Six subcommands mirror the pipeline stages. Every run is driven by one
//! `RunConfig`: either the built-in defaults, a JSON file given with
//! `--config`, or that file with individual flags layered on top. Usage
//! errors exit with code 2; runtime failures print the offending path or
//! setting and exit with code 1.

use clap::{Args, Parser, Subcommand};
use mvps_core::io::dataset::read_json;
use mvps_core::mesh::profile::Plane;
use mvps_core::pipeline::{
    self, material_preset, shape_preset, MeshSource, RunConfig,
};
use mvps_core::train::config::AblationFlags;
use mvps_core::{Error, Result, Vec3};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "mvps",
    version,
    about = "Surface reconstruction from synthetic multi-view, multi-light turntable scenes"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Options shared by every stage. Unset flags fall back to the configuration
/// file, which falls back to built-in defaults.
#[derive(Args, Clone, Debug, Default)]
struct CommonOpts {
    /// Base configuration JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output root directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root seed; every stage derives its randomness from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Scene shape preset: sphere, torus, or rounded_box.
    #[arg(long)]
    shape: Option<String>,
    /// Material preset: lambertian, glossy, or anisotropic.
    #[arg(long)]
    material: Option<String>,
    /// Camera count on the turntable ring.
    #[arg(long)]
    views: Option<usize>,
    /// Lights per view.
    #[arg(long)]
    lights: Option<usize>,
    /// Image width in pixels.
    #[arg(long)]
    width: Option<usize>,
    /// Image height in pixels.
    #[arg(long)]
    height: Option<usize>,
    /// Additive Gaussian pixel noise level.
    #[arg(long)]
    noise: Option<f64>,
    /// Optimization epochs.
    #[arg(long)]
    epochs: Option<u64>,
    /// Rays drawn per view per epoch.
    #[arg(long)]
    rays: Option<usize>,
    /// Marching-cubes resolution for surface extraction.
    #[arg(long)]
    grid_res: Option<usize>,
    /// F-score distance threshold; default is 1% of the bounding diameter.
    #[arg(long)]
    tau_f: Option<f64>,
    /// Surface samples per mesh for the metrics.
    #[arg(long)]
    samples: Option<usize>,
}

impl CommonOpts {
    fn build(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => read_json::<RunConfig>(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.shape {
            cfg.scene.shape = shape_preset(v)?;
        }
        if let Some(v) = &self.material {
            cfg.scene.material = material_preset(v)?;
        }
        if let Some(v) = self.views {
            cfg.rig.views = v;
        }
        if let Some(v) = self.lights {
            cfg.rig.lights = v;
        }
        if let Some(v) = self.width {
            cfg.rig.width = v;
        }
        if let Some(v) = self.height {
            cfg.rig.height = v;
        }
        if let Some(v) = self.noise {
            cfg.scene.noise_std = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.rays {
            cfg.train.rays_per_view = v;
        }
        if let Some(v) = self.grid_res {
            cfg.eval.grid_res = v;
        }
        if let Some(v) = self.tau_f {
            cfg.eval.tau_f = Some(v);
        }
        if let Some(v) = self.samples {
            cfg.eval.samples = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Render the synthetic turntable dataset.
    Simulate(CommonOpts),
    /// Run the depth and normal oracles and their uncertainty gates.
    Priors(CommonOpts),
    /// Train the fields on dataset plus priors and extract the surface.
    Reconstruct {
        #[command(flatten)]
        common: CommonOpts,
        /// Loss switches for this run, comma separated: no_mvs, no_ps,
        /// no_render, no_uncertainty.
        #[arg(long, value_delimiter = ',')]
        flags: Vec<String>,
    },
    /// Score a reconstructed mesh against the analytic ground truth.
    Evaluate {
        #[command(flatten)]
        common: CommonOpts,
        /// Mesh to score instead of the reconstruction under the output root.
        #[arg(long, conflicts_with = "checkpoint")]
        mesh: Option<PathBuf>,
        /// Checkpoint whose surface is extracted and scored.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and score loss variants side by side.
    Ablate {
        #[command(flatten)]
        common: CommonOpts,
        /// Variants to run, comma separated; switches combine with '-'
        /// (for example no_mvs-no_ps). Default: full plus each single
        /// switch.
        #[arg(long, value_delimiter = ',')]
        flags: Vec<String>,
    },
    /// Export planar section curves of a reconstructed mesh as CSV.
    Profile {
        #[command(flatten)]
        common: CommonOpts,
        /// Mesh to section instead of the reconstruction under the output
        /// root.
        #[arg(long, conflicts_with = "checkpoint")]
        mesh: Option<PathBuf>,
        /// Checkpoint whose surface is extracted and sectioned.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Section plane as nx,ny,nz,offset.
        #[arg(long, default_value = "0,0,1,0")]
        plane: String,
    },
}

fn apply_switch(flags: &mut AblationFlags, name: &str) -> Result<()> {
    match name {
        "no_mvs" => flags.no_mvs = true,
        "no_ps" => flags.no_ps = true,
        "no_render" => flags.no_render = true,
        "no_uncertainty" => flags.no_uncertainty = true,
        "full" => {}
        other => {
            return Err(Error::Config(format!(
                "unknown loss switch '{other}'; expected no_mvs, no_ps, no_render, or no_uncertainty"
            )))
        }
    }
    Ok(())
}

/// One variant tag: `full` or switches joined by '-'.
fn parse_variant(tag: &str) -> Result<AblationFlags> {
    let mut flags = AblationFlags::default();
    for part in tag.split('-') {
        apply_switch(&mut flags, part)?;
    }
    Ok(flags)
}

fn mesh_source(mesh: &Option<PathBuf>, checkpoint: &Option<PathBuf>) -> MeshSource {
    match (mesh, checkpoint) {
        (Some(p), _) => MeshSource::Mesh(p.clone()),
        (None, Some(p)) => MeshSource::Checkpoint(p.clone()),
        (None, None) => MeshSource::ReconDir,
    }
}

fn parse_plane(text: &str) -> Result<Plane> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 4 {
        return Err(Error::Config(format!(
            "plane '{text}' must be nx,ny,nz,offset"
        )));
    }
    let mut nums = [0.0; 4];
    for (slot, part) in nums.iter_mut().zip(&parts) {
        *slot = part.trim().parse::<f64>().map_err(|_| {
            Error::Config(format!("plane component '{part}' is not a number"))
        })?;
    }
    Plane::new(Vec3::new(nums[0], nums[1], nums[2]), nums[3])
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Simulate(common) => {
            let cfg = common.build()?;
            let summary = pipeline::run_simulate(&cfg)?;
            println!(
                "wrote dataset: {} ({} views x {} lights)",
                summary.dir.display(),
                summary.views,
                summary.lights
            );
        }
        Cmd::Priors(common) => {
            let cfg = common.build()?;
            let dir = pipeline::run_priors(&cfg)?;
            println!("wrote priors: {}", dir.display());
        }
        Cmd::Reconstruct { common, flags } => {
            let mut cfg = common.build()?;
            for name in &flags {
                apply_switch(&mut cfg.train.ablation, name)?;
            }
            let artifacts = pipeline::run_reconstruct(&cfg)?;
            println!(
                "wrote mesh: {} (variant {}, supervision light {})",
                artifacts.dir.join("recon_mesh.obj").display(),
                cfg.train.ablation.tag(),
                artifacts.light_index
            );
        }
        Cmd::Evaluate {
            common,
            mesh,
            checkpoint,
        } => {
            let cfg = common.build()?;
            let report = pipeline::run_evaluate(&cfg, &mesh_source(&mesh, &checkpoint))?;
            println!("chamfer_l2: {}", report.chamfer_l2);
            println!(
                "fscore: {} (precision {}, recall {}, tau {})",
                report.fscore, report.precision, report.recall, report.tau
            );
            println!("wrote report: {}", cfg.eval_dir().join("report.json").display());
        }
        Cmd::Ablate { common, flags } => {
            let cfg = common.build()?;
            let variants = if flags.is_empty() {
                pipeline::standard_variants()
            } else {
                flags
                    .iter()
                    .map(|t| parse_variant(t))
                    .collect::<Result<Vec<_>>>()?
            };
            let rows = pipeline::run_ablate(&cfg, &variants)?;
            for (tag, report) in &rows {
                println!(
                    "{tag}: chamfer_l2 {} fscore {}",
                    report.chamfer_l2, report.fscore
                );
            }
            println!(
                "appended {} rows to {}",
                rows.len(),
                cfg.ablate_dir().join("ablation.csv").display()
            );
        }
        Cmd::Profile {
            common,
            mesh,
            checkpoint,
            plane,
        } => {
            let cfg = common.build()?;
            let plane = parse_plane(&plane)?;
            let lines = pipeline::run_profile(&cfg, &mesh_source(&mesh, &checkpoint), &plane)?;
            println!(
                "wrote profile: {} ({} components)",
                cfg.profile_dir().join("profile.csv").display(),
                lines.len()
            );
        }
    }
    Ok(())
}

fn main() {
    pipeline::init_threads();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli.cmd) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
