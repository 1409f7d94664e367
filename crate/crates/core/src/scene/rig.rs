//! Turntable acquisition rig: cameras on a ring around the object, each
//! carrying its own ring of directional lights near the optical axis.

use crate::error::{Error, Result};
use crate::Vec3;
use crate::scene::camera::{intrinsics, Camera};
use crate::S;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigConfig {
    pub views: usize,
    pub lights: usize,
    /// Distance of each camera from the origin.
    pub radius: S,
    pub elevation_deg: S,
    /// Half-angle of the light ring around the optical axis.
    pub light_cone_deg: S,
    pub width: usize,
    pub height: usize,
    /// Field of view margin around the bounding sphere.
    pub fov_scale: S,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            views: 8,
            lights: 16,
            radius: 4.0,
            elevation_deg: 20.0,
            light_cone_deg: 25.0,
            width: 128,
            height: 128,
            fov_scale: 1.25,
        }
    }
}

/// One camera with its lights: world-frame unit directions toward each light
/// and scalar intensities.
#[derive(Clone, Debug)]
pub struct ViewSetup {
    pub camera: Camera,
    pub light_dirs: Vec<Vec3>,
    pub light_intensities: Vec<S>,
}

/// Places cameras at uniform azimuths and builds their light rings. The
/// focal length frames the bounding sphere with the configured margin.
pub fn build_rig(cfg: &RigConfig, bounding_radius: S) -> Result<Vec<ViewSetup>> {
    if cfg.views == 0 || cfg.lights == 0 {
        return Err(Error::Config("rig needs at least one view and one light".into()));
    }
    if cfg.radius <= bounding_radius {
        return Err(Error::Config(format!(
            "camera radius {} must exceed the bounding radius {}",
            cfg.radius, bounding_radius
        )));
    }
    let half_fov = (bounding_radius / cfg.radius).asin() * cfg.fov_scale;
    if half_fov >= std::f64::consts::FRAC_PI_2 {
        return Err(Error::Config(
            "field of view exceeds 180 degrees; move the cameras back".into(),
        ));
    }
    let f = 0.5 * cfg.width as S / half_fov.tan();
    let k = intrinsics(f, 0.5 * cfg.width as S, 0.5 * cfg.height as S);

    let elev = cfg.elevation_deg.to_radians();
    let theta = cfg.light_cone_deg.to_radians();
    let mut views = Vec::with_capacity(cfg.views);
    for i in 0..cfg.views {
        let phi = 2.0 * std::f64::consts::PI * i as S / cfg.views as S;
        let eye = Vec3::new(
            cfg.radius * elev.cos() * phi.cos(),
            cfg.radius * elev.cos() * phi.sin(),
            cfg.radius * elev.sin(),
        );
        let camera = Camera::look_at(
            eye,
            Vec3::zero(),
            Vec3::new(0.0, 0.0, 1.0),
            k.clone(),
            cfg.width,
            cfg.height,
        );
        camera.validate()?;
        let mut light_dirs = Vec::with_capacity(cfg.lights);
        for j in 0..cfg.lights {
            let psi = 2.0 * std::f64::consts::PI * j as S / cfg.lights as S;
            // Camera-frame direction toward the light; negative z points
            // back at the viewer, so lights sit around the camera.
            let l_cam = Vec3::new(theta.sin() * psi.cos(), theta.sin() * psi.sin(), -theta.cos());
            light_dirs.push(camera.r.mul_vec(l_cam));
        }
        views.push(ViewSetup {
            camera,
            light_dirs,
            light_intensities: vec![1.0; cfg.lights],
        });
    }
    Ok(views)
}
