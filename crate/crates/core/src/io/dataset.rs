//! On-disk dataset and prior layout.
//!
//! A dataset directory holds `meta.json`, `cameras.json`, and one
//! `view_NNN/` folder per view with `light_NNN.pfm` exposures plus
//! `median.pfm`, `mask.pgm`, `gt_depth.pfm`, and `gt_normal.pfm`. A priors
//! directory holds `priors_meta.json` and per-view folders with
//! `prior_depth.pfm`, `prior_conf.pfm`, `prior_normal.pfm`,
//! `prior_var.pfm`, `gate_mvs.pgm`, and `gate_ps.pgm`.

use crate::error::{Error, Result};
use crate::img::ImageF;
use crate::io::pfm::{read_pfm, write_pfm};
use crate::io::pgm::{read_pgm, write_pgm};
use crate::priors::{GateConfig, MvsConfig, PsConfig};
use crate::scene::camera::Camera;
use crate::scene::rig::{RigConfig, ViewSetup};
use crate::scene::simulate::{RenderedView, SceneSpec};
use crate::{Mat3, Vec3, S};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const FORMAT_VERSION: u32 = 1;

/// Worded once and written into every `cameras.json`.
pub const CAMERA_CONVENTION: &str = "matrices are row-major; x_world = R * x_cam + t with R \
orthonormal and t the camera center; depth is the camera-frame z coordinate; pixel (x, y) is \
sampled at (x + 0.5, y + 0.5); light_dirs are world-frame unit vectors pointing toward each \
light";

/// Serializes any value as pretty JSON with a trailing newline. Output
/// bytes are deterministic for a given value.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(path, format!("serialize: {e}")))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub k: [[S; 3]; 3],
    pub r: [[S; 3]; 3],
    pub t: [S; 3],
    pub width: usize,
    pub height: usize,
    pub light_dirs: Vec<[S; 3]>,
    pub light_intensities: Vec<S>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CamerasFile {
    pub format_version: u32,
    pub convention: String,
    pub views: Vec<CameraRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaFile {
    pub format_version: u32,
    pub views: usize,
    pub lights: usize,
    pub width: usize,
    pub height: usize,
    pub bounding_radius: S,
    pub scene: SceneSpec,
    pub rig: RigConfig,
}

/// One fully loaded view with its acquisition geometry.
#[derive(Clone, Debug)]
pub struct LoadedView {
    pub setup: ViewSetup,
    pub images: Vec<ImageF>,
    pub median: ImageF,
    pub mask: ImageF,
    pub gt_depth: ImageF,
    pub gt_normal: ImageF,
}

#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub meta: MetaFile,
    pub views: Vec<LoadedView>,
}

pub fn view_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("view_{index:03}"))
}

fn light_file(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("light_{index:03}.pfm"))
}

fn record_from_setup(setup: &ViewSetup) -> CameraRecord {
    let c = &setup.camera;
    CameraRecord {
        k: c.k.m,
        r: c.r.m,
        t: [c.t.x, c.t.y, c.t.z],
        width: c.width,
        height: c.height,
        light_dirs: setup.light_dirs.iter().map(|l| [l.x, l.y, l.z]).collect(),
        light_intensities: setup.light_intensities.clone(),
    }
}

fn setup_from_record(rec: &CameraRecord) -> ViewSetup {
    ViewSetup {
        camera: Camera {
            k: Mat3::from_rows(rec.k[0], rec.k[1], rec.k[2]),
            r: Mat3::from_rows(rec.r[0], rec.r[1], rec.r[2]),
            t: Vec3::new(rec.t[0], rec.t[1], rec.t[2]),
            width: rec.width,
            height: rec.height,
        },
        light_dirs: rec
            .light_dirs
            .iter()
            .map(|l| Vec3::new(l[0], l[1], l[2]))
            .collect(),
        light_intensities: rec.light_intensities.clone(),
    }
}

/// Writes a complete simulated dataset under `root`.
pub fn write_dataset(
    root: &Path,
    spec: &SceneSpec,
    rig: &RigConfig,
    views: &[ViewSetup],
    rendered: &[RenderedView],
) -> Result<()> {
    if views.len() != rendered.len() || views.is_empty() {
        return Err(Error::Config(
            "camera setups and rendered views must pair up".into(),
        ));
    }
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let meta = MetaFile {
        format_version: FORMAT_VERSION,
        views: views.len(),
        lights: views[0].light_dirs.len(),
        width: views[0].camera.width,
        height: views[0].camera.height,
        bounding_radius: spec.shape.bounding_radius(),
        scene: spec.clone(),
        rig: rig.clone(),
    };
    write_json(&root.join("meta.json"), &meta)?;
    let cameras = CamerasFile {
        format_version: FORMAT_VERSION,
        convention: CAMERA_CONVENTION.to_owned(),
        views: views.iter().map(record_from_setup).collect(),
    };
    write_json(&root.join("cameras.json"), &cameras)?;
    for (i, rv) in rendered.iter().enumerate() {
        let dir = view_dir(root, i);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (j, img) in rv.images.iter().enumerate() {
            write_pfm(&light_file(&dir, j), img)?;
        }
        write_pfm(&dir.join("median.pfm"), &rv.median)?;
        write_pgm(&dir.join("mask.pgm"), &rv.mask)?;
        write_pfm(&dir.join("gt_depth.pfm"), &rv.depth)?;
        write_pfm(&dir.join("gt_normal.pfm"), &rv.normal)?;
    }
    Ok(())
}

fn check_size(path: &Path, img: &ImageF, w: usize, h: usize, ch: usize) -> Result<()> {
    if img.width() != w || img.height() != h || img.channels() != ch {
        return Err(Error::format(
            path,
            format!(
                "size {}x{}x{} disagrees with the camera ({w}x{h}x{ch})",
                img.width(),
                img.height(),
                img.channels()
            ),
        ));
    }
    Ok(())
}

/// Loads and validates a dataset directory.
pub fn load_dataset(root: &Path) -> Result<LoadedDataset> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let meta: MetaFile = read_json(&root.join("meta.json"))?;
    let cameras_path = root.join("cameras.json");
    let cameras: CamerasFile = read_json(&cameras_path)?;
    if cameras.views.len() != meta.views {
        return Err(Error::schema(
            &cameras_path,
            "views",
            format!(
                "{} cameras but meta.json declares {} views",
                cameras.views.len(),
                meta.views
            ),
        ));
    }

    let mut views = Vec::with_capacity(meta.views);
    for (i, rec) in cameras.views.iter().enumerate() {
        let setup = setup_from_record(rec);
        let r = &setup.camera.r;
        if r.orthonormality_defect() > 1e-6 {
            return Err(Error::schema(
                &cameras_path,
                format!("views[{i}].r"),
                "rotation is not orthonormal within 1e-6",
            ));
        }
        if r.det() < 0.0 {
            return Err(Error::schema(
                &cameras_path,
                format!("views[{i}].r"),
                "rotation is a reflection",
            ));
        }
        if setup.light_dirs.len() != meta.lights
            || setup.light_intensities.len() != meta.lights
        {
            return Err(Error::schema(
                &cameras_path,
                format!("views[{i}].light_dirs"),
                format!("expected {} lights", meta.lights),
            ));
        }

        let dir = view_dir(root, i);
        let mask_path = dir.join("mask.pgm");
        if !mask_path.is_file() {
            return Err(Error::schema(
                &mask_path,
                "mask",
                format!("missing mask for view {i}"),
            ));
        }
        let mask = read_pgm(&mask_path)?;
        let (w, h) = (setup.camera.width, setup.camera.height);
        check_size(&mask_path, &mask, w, h, 1)?;

        let mut images = Vec::with_capacity(meta.lights);
        for j in 0..meta.lights {
            let p = light_file(&dir, j);
            let img = read_pfm(&p)?;
            check_size(&p, &img, w, h, 3)?;
            images.push(img);
        }
        let median_path = dir.join("median.pfm");
        let median = read_pfm(&median_path)?;
        check_size(&median_path, &median, w, h, 3)?;
        let depth_path = dir.join("gt_depth.pfm");
        let gt_depth = read_pfm(&depth_path)?;
        check_size(&depth_path, &gt_depth, w, h, 1)?;
        let normal_path = dir.join("gt_normal.pfm");
        let gt_normal = read_pfm(&normal_path)?;
        check_size(&normal_path, &gt_normal, w, h, 3)?;

        views.push(LoadedView {
            setup,
            images,
            median,
            mask,
            gt_depth,
            gt_normal,
        });
    }
    Ok(LoadedDataset { meta, views })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorsMeta {
    pub format_version: u32,
    pub views: usize,
    pub mvs: MvsConfig,
    pub ps: PsConfig,
    pub gate: GateConfig,
    pub seed: u64,
}

/// Per-view prior maps in their on-disk shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewPriors {
    /// Z-depth from the stereo oracle; 0 outside the mask.
    pub depth: ImageF,
    /// Stereo confidence in [0, 1].
    pub confidence: ImageF,
    /// World-frame unit normal from the photometric oracle.
    pub normal: ImageF,
    /// Per-channel normal variance from the oracle ensemble.
    pub variance: ImageF,
    /// 1.0 where the depth prior passed its gate.
    pub gate_mvs: ImageF,
    /// 1.0 where the normal prior passed its gate.
    pub gate_ps: ImageF,
}

#[derive(Clone, Debug)]
pub struct LoadedPriors {
    pub meta: PriorsMeta,
    pub views: Vec<ViewPriors>,
}

pub fn write_priors(root: &Path, meta: &PriorsMeta, views: &[ViewPriors]) -> Result<()> {
    if views.len() != meta.views {
        return Err(Error::Config(format!(
            "prior list has {} views but the meta declares {}",
            views.len(),
            meta.views
        )));
    }
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    write_json(&root.join("priors_meta.json"), meta)?;
    for (i, v) in views.iter().enumerate() {
        let dir = view_dir(root, i);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_pfm(&dir.join("prior_depth.pfm"), &v.depth)?;
        write_pfm(&dir.join("prior_conf.pfm"), &v.confidence)?;
        write_pfm(&dir.join("prior_normal.pfm"), &v.normal)?;
        write_pfm(&dir.join("prior_var.pfm"), &v.variance)?;
        write_pgm(&dir.join("gate_mvs.pgm"), &v.gate_mvs)?;
        write_pgm(&dir.join("gate_ps.pgm"), &v.gate_ps)?;
    }
    Ok(())
}

pub fn load_priors(root: &Path) -> Result<LoadedPriors> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "priors directory not found"),
        ));
    }
    let meta: PriorsMeta = read_json(&root.join("priors_meta.json"))?;
    let mut views = Vec::with_capacity(meta.views);
    for i in 0..meta.views {
        let dir = view_dir(root, i);
        views.push(ViewPriors {
            depth: read_pfm(&dir.join("prior_depth.pfm"))?,
            confidence: read_pfm(&dir.join("prior_conf.pfm"))?,
            normal: read_pfm(&dir.join("prior_normal.pfm"))?,
            variance: read_pfm(&dir.join("prior_var.pfm"))?,
            gate_mvs: read_pgm(&dir.join("gate_mvs.pgm"))?,
            gate_ps: read_pgm(&dir.join("gate_ps.pgm"))?,
        });
    }
    Ok(LoadedPriors { meta, views })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::brdf::{Albedo, Brdf, Material};
    use crate::scene::rig::build_rig;
    use crate::scene::shape::Shape;
    use crate::scene::simulate::render_view;

    fn tiny_scene() -> (SceneSpec, RigConfig) {
        let spec = SceneSpec {
            shape: Shape::Sphere { radius: 1.0 },
            material: Material {
                albedo: Albedo::Constant {
                    rgb: [0.8, 0.7, 0.6],
                },
                brdf: Brdf::Lambertian,
            },
            noise_std: 0.0,
        };
        let rig = RigConfig {
            views: 2,
            lights: 3,
            width: 16,
            height: 16,
            ..RigConfig::default()
        };
        (spec, rig)
    }

    fn render_all(spec: &SceneSpec, rig: &RigConfig) -> (Vec<ViewSetup>, Vec<RenderedView>) {
        let views = build_rig(rig, spec.shape.bounding_radius()).unwrap();
        let rendered = views
            .iter()
            .map(|v| render_view(spec, v, 7))
            .collect::<Vec<_>>();
        (views, rendered)
    }

    fn temp_root(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("mvps-dataset-{tag}"));
        std::fs::remove_dir_all(&dir).ok();
        dir
    }

    #[test]
    fn dataset_round_trip_is_stable_and_validated() {
        let (spec, rig) = tiny_scene();
        let (views, rendered) = render_all(&spec, &rig);
        let root = temp_root("roundtrip");
        write_dataset(&root, &spec, &rig, &views, &rendered).unwrap();
        let loaded = load_dataset(&root).unwrap();
        assert_eq!(loaded.meta.views, 2);
        assert_eq!(loaded.meta.lights, 3);
        assert_eq!(loaded.meta.scene, spec);
        assert_eq!(loaded.views.len(), 2);
        // Geometry survives exactly; float maps survive as f32.
        for (setup, lv) in views.iter().zip(&loaded.views) {
            assert_eq!(setup.camera, lv.setup.camera);
            assert_eq!(setup.light_dirs, lv.setup.light_dirs);
        }
        for (rv, lv) in rendered.iter().zip(&loaded.views) {
            assert_eq!(rv.mask, lv.mask);
            for (a, b) in rv.images[0].data().iter().zip(lv.images[0].data()) {
                assert_eq!(*a as f32, *b as f32);
            }
        }
        // Writing the loaded dataset again reproduces every byte.
        let root2 = temp_root("roundtrip2");
        let setups: Vec<ViewSetup> = loaded.views.iter().map(|v| v.setup.clone()).collect();
        let rendered2: Vec<RenderedView> = loaded
            .views
            .iter()
            .map(|v| RenderedView {
                images: v.images.clone(),
                median: v.median.clone(),
                mask: v.mask.clone(),
                depth: v.gt_depth.clone(),
                normal: v.gt_normal.clone(),
                max_step_rays: 0,
            })
            .collect();
        write_dataset(&root2, &spec, &rig, &setups, &rendered2).unwrap();
        for rel in [
            "meta.json",
            "cameras.json",
            "view_000/light_000.pfm",
            "view_000/median.pfm",
            "view_000/mask.pgm",
            "view_001/gt_depth.pfm",
            "view_001/gt_normal.pfm",
        ] {
            let a = std::fs::read(root.join(rel)).unwrap();
            let b = std::fs::read(root2.join(rel)).unwrap();
            assert_eq!(a, b, "bytes differ for {rel}");
        }
        std::fs::remove_dir_all(&root).ok();
        std::fs::remove_dir_all(&root2).ok();
    }

    #[test]
    fn missing_mask_names_the_view() {
        let (spec, rig) = tiny_scene();
        let (views, rendered) = render_all(&spec, &rig);
        let root = temp_root("missing-mask");
        write_dataset(&root, &spec, &rig, &views, &rendered).unwrap();
        std::fs::remove_file(view_dir(&root, 1).join("mask.pgm")).unwrap();
        let err = load_dataset(&root).unwrap_err().to_string();
        assert!(err.contains("view 1"), "error was: {err}");
        std::fs::remove_dir_all(&root).ok();
    }

    #[test]
    fn corrupt_rotation_is_rejected() {
        let (spec, rig) = tiny_scene();
        let (views, rendered) = render_all(&spec, &rig);
        let root = temp_root("bad-rot");
        write_dataset(&root, &spec, &rig, &views, &rendered).unwrap();
        let path = root.join("cameras.json");
        let mut cams: CamerasFile = read_json(&path).unwrap();
        cams.views[0].r[0][0] += 1e-3;
        write_json(&path, &cams).unwrap();
        let err = load_dataset(&root).unwrap_err().to_string();
        assert!(err.contains("orthonormal"), "error was: {err}");
        assert!(err.contains("views[0]"), "error was: {err}");
        std::fs::remove_dir_all(&root).ok();
    }

    #[test]
    fn missing_directory_is_an_io_error_with_path() {
        let err = load_dataset(Path::new("/nonexistent/mvps-nowhere"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("mvps-nowhere"), "error was: {err}");
    }

    #[test]
    fn priors_round_trip() {
        let mk = |v: S, ch: usize| ImageF::from_data(4, 4, ch, vec![v; 16 * ch]);
        let views = vec![ViewPriors {
            depth: mk(2.5, 1),
            confidence: mk(0.75, 1),
            normal: mk(0.5, 3),
            variance: mk(0.01, 3),
            gate_mvs: mk(1.0, 1),
            gate_ps: mk(0.0, 1),
        }];
        let meta = PriorsMeta {
            format_version: FORMAT_VERSION,
            views: 1,
            mvs: MvsConfig::default(),
            ps: PsConfig::default(),
            gate: GateConfig::default(),
            seed: 11,
        };
        let root = temp_root("priors");
        write_priors(&root, &meta, &views).unwrap();
        let loaded = load_priors(&root).unwrap();
        assert_eq!(loaded.meta, meta);
        assert_eq!(loaded.views[0].gate_mvs, views[0].gate_mvs);
        assert_eq!(loaded.views[0].depth, views[0].depth);
        std::fs::remove_dir_all(&root).ok();
    }
}
