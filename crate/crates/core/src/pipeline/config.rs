//! One configuration object describing a complete run, plus the per-stage
//! seed fan-out that lets stages be rerun independently yet reproducibly.

use crate::error::{Error, Result};
use crate::fields::config::FieldConfig;
use crate::priors::gate::GateConfig;
use crate::priors::mvs::MvsConfig;
use crate::priors::ps::PsConfig;
use crate::scene::brdf::{Albedo, Brdf, Material};
use crate::scene::rig::RigConfig;
use crate::scene::shape::Shape;
use crate::scene::simulate::SceneSpec;
use crate::seed;
use crate::train::config::TrainConfig;
use crate::S;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Geometry evaluation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Marching-cubes resolution for the reconstructed field.
    pub grid_res: usize,
    /// Marching-cubes resolution for the analytic reference shape.
    pub gt_grid_res: usize,
    /// Area-uniform surface samples drawn from each mesh for the metrics.
    pub samples: usize,
    /// F-score distance threshold; absent means 1% of the reference shape's
    /// bounding diameter.
    pub tau_f: Option<S>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            grid_res: 128,
            gt_grid_res: 192,
            samples: 100_000,
            tau_f: None,
        }
    }
}

impl EvalConfig {
    /// The F-score threshold actually used for a shape of the given bounding
    /// radius.
    pub fn resolved_tau(&self, bounding_radius: S) -> S {
        self.tau_f.unwrap_or(0.02 * bounding_radius)
    }
}

/// Everything a full run needs: scene, acquisition rig, both prior oracles,
/// their gates, the field architecture, the optimization schedule, and the
/// evaluation protocol. One root seed drives every stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub scene: SceneSpec,
    pub rig: RigConfig,
    pub mvs: MvsConfig,
    pub ps: PsConfig,
    pub gate: GateConfig,
    pub field: FieldConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Root seed; each stage derives its own stream from it.
    pub seed: u64,
    /// Output root; every stage writes into its own subdirectory.
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec {
                shape: Shape::Sphere { radius: 1.0 },
                material: Material {
                    albedo: Albedo::Constant {
                        rgb: [0.7, 0.6, 0.5],
                    },
                    brdf: Brdf::Lambertian,
                },
                noise_std: 0.0,
            },
            rig: RigConfig::default(),
            mvs: MvsConfig::default(),
            ps: PsConfig::default(),
            gate: GateConfig::default(),
            field: FieldConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            seed: 0,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.field.validate()?;
        self.train.validate()?;
        if self.scene.noise_std < 0.0 {
            return Err(Error::Config("image noise level must not be negative".into()));
        }
        if self.mvs.hypothesis_count < 3 || self.mvs.hypothesis_count % 2 == 0 {
            return Err(Error::Config(
                "depth hypothesis count must be odd and at least 3".into(),
            ));
        }
        if self.ps.ensemble == 0 {
            return Err(Error::Config("normal-oracle ensemble must not be empty".into()));
        }
        if self.eval.grid_res < 8 || self.eval.gt_grid_res < 8 {
            return Err(Error::Config(
                "evaluation grid resolutions must be at least 8".into(),
            ));
        }
        if self.eval.samples == 0 {
            return Err(Error::Config("evaluation needs at least one sample".into()));
        }
        if let Some(t) = self.eval.tau_f {
            if !(t > 0.0) {
                return Err(Error::Config("F-score threshold must be positive".into()));
            }
        }
        let rb = self.scene.shape.bounding_radius();
        if self.train.sample.sphere_radius <= rb {
            return Err(Error::Config(format!(
                "ray-sampling sphere radius {} does not enclose the shape (bounding radius {rb})",
                self.train.sample.sphere_radius
            )));
        }
        Ok(())
    }

    /// Seed stream for one pipeline stage.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        seed::derive(self.seed, stage)
    }

    /// The optimizer configuration with its seed resolved from the root
    /// seed, so a run is fully determined by `seed` alone.
    pub fn resolved_train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.stage_seed("reconstruct"),
            ..self.train.clone()
        }
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.out.join("dataset")
    }

    pub fn priors_dir(&self) -> PathBuf {
        self.out.join("priors")
    }

    pub fn recon_dir(&self) -> PathBuf {
        self.out.join("recon")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.out.join("eval")
    }

    pub fn ablate_dir(&self) -> PathBuf {
        self.out.join("ablate")
    }

    pub fn profile_dir(&self) -> PathBuf {
        self.out.join("profile")
    }
}

/// Named shape presets selectable from the command line. Sizes are chosen so
/// every preset fits inside the default ray-sampling sphere.
pub fn shape_preset(name: &str) -> Result<Shape> {
    match name {
        "sphere" => Ok(Shape::Sphere { radius: 1.0 }),
        "torus" => Ok(Shape::Torus {
            major: 0.7,
            minor: 0.3,
        }),
        "rounded_box" => Ok(Shape::RoundedBox {
            half: [0.6, 0.6, 0.6],
            rounding: 0.1,
        }),
        other => Err(Error::Config(format!(
            "unknown shape '{other}'; expected sphere, torus, or rounded_box"
        ))),
    }
}

/// Named material presets selectable from the command line.
pub fn material_preset(name: &str) -> Result<Material> {
    match name {
        // Diffuse with mild texture, the friendly case for both oracles.
        "lambertian" => Ok(Material {
            albedo: Albedo::Checker {
                rgb_a: [0.75, 0.55, 0.35],
                rgb_b: [0.35, 0.55, 0.75],
                scale: 4.0,
            },
            brdf: Brdf::Lambertian,
        }),
        // View-dependent and texture-less: photo-consistency breaks down and
        // the depth oracle loses confidence.
        "glossy" => Ok(Material {
            albedo: Albedo::Constant {
                rgb: [0.6, 0.6, 0.6],
            },
            brdf: Brdf::BlinnPhong {
                shininess: 40.0,
                specular: 0.6,
            },
        }),
        // Anisotropic lobe, the hardest case for photo-consistency.
        "anisotropic" => Ok(Material {
            albedo: Albedo::Constant {
                rgb: [0.6, 0.6, 0.6],
            },
            brdf: Brdf::WardAniso {
                alpha_x: 0.12,
                alpha_y: 0.45,
                specular: 0.5,
            },
        }),
        other => Err(Error::Config(format!(
            "unknown material '{other}'; expected lambertian, glossy, or anisotropic"
        ))),
    }
}
