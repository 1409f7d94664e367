//! Reflectance models and spatially varying albedo for the simulator.

use crate::Vec3;
use crate::S;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Albedo {
    Constant { rgb: [S; 3] },
    /// 3D checkerboard: cells of side `1/scale` alternating between two
    /// colors. Gives the images local texture variance.
    Checker { rgb_a: [S; 3], rgb_b: [S; 3], scale: S },
}

impl Albedo {
    pub fn at(&self, p: Vec3) -> Vec3 {
        match *self {
            Albedo::Constant { rgb } => Vec3::from_array(rgb),
            Albedo::Checker { rgb_a, rgb_b, scale } => {
                let c = (p.x * scale).floor() + (p.y * scale).floor() + (p.z * scale).floor();
                if (c as i64).rem_euclid(2) == 0 {
                    Vec3::from_array(rgb_a)
                } else {
                    Vec3::from_array(rgb_b)
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Brdf {
    Lambertian,
    BlinnPhong { shininess: S, specular: S },
    /// Anisotropic Ward lobe. The tangent frame projects a fixed reference
    /// axis onto the surface; a fallback axis covers normals parallel to it.
    WardAniso {
        alpha_x: S,
        alpha_y: S,
        specular: S,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub albedo: Albedo,
    pub brdf: Brdf,
}

/// Tangent perpendicular to `n`, from projecting the world x axis (or the
/// world y axis when `n` is nearly parallel to x).
pub fn surface_tangent(n: Vec3) -> Vec3 {
    let rx = Vec3::new(1.0, 0.0, 0.0);
    let axis = if n.dot(rx).abs() > 0.999 {
        Vec3::new(0.0, 1.0, 0.0)
    } else {
        rx
    };
    (axis - n * n.dot(axis)).normalized()
}

impl Material {
    /// True when the reflectance is view dependent, which degrades photo
    /// consistency between views.
    pub fn is_glossy(&self) -> bool {
        !matches!(self.brdf, Brdf::Lambertian)
    }

    /// BRDF value, rgb. `l` points toward the light, `v` toward the viewer,
    /// both unit; `n` is the unit surface normal.
    pub fn eval(&self, p: Vec3, n: Vec3, l: Vec3, v: Vec3) -> Vec3 {
        let diffuse = self.albedo.at(p) / PI;
        let spec = match self.brdf {
            Brdf::Lambertian => 0.0,
            Brdf::BlinnPhong {
                shininess,
                specular,
            } => {
                let h = (l + v).normalized();
                specular * n.dot(h).max(0.0).powf(shininess)
            }
            Brdf::WardAniso {
                alpha_x,
                alpha_y,
                specular,
            } => {
                let nl = n.dot(l);
                let nv = n.dot(v);
                if nl <= 1e-9 || nv <= 1e-9 {
                    0.0
                } else {
                    let h = (l + v).normalized();
                    let t = surface_tangent(n);
                    let b = n.cross(t);
                    let hn = n.dot(h);
                    if hn <= 1e-9 {
                        0.0
                    } else {
                        let ht = h.dot(t) / alpha_x;
                        let hb = h.dot(b) / alpha_y;
                        let ex = (-(ht * ht + hb * hb) / (hn * hn)).exp();
                        specular * ex / (4.0 * PI * alpha_x * alpha_y * (nl * nv).sqrt())
                    }
                }
            }
        };
        diffuse + Vec3::splat(spec)
    }
}
