//! Analytic signed distance shapes used as ground truth by the simulator.

use crate::Vec3;
use crate::S;
use serde::{Deserialize, Serialize};

/// Exact signed distance shapes. All are centered at the origin; the torus
/// ring lies in the xy plane around the z axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { radius: S },
    Torus { major: S, minor: S },
    RoundedBox { half: [S; 3], rounding: S },
}

impl Shape {
    pub fn sdf(&self, p: Vec3) -> S {
        match *self {
            Shape::Sphere { radius } => p.norm() - radius,
            Shape::Torus { major, minor } => {
                let ring = (p.x * p.x + p.y * p.y).sqrt() - major;
                (ring * ring + p.z * p.z).sqrt() - minor
            }
            Shape::RoundedBox { half, rounding } => {
                let q = Vec3::new(
                    p.x.abs() - half[0],
                    p.y.abs() - half[1],
                    p.z.abs() - half[2],
                );
                let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
                let inside = q.max_component().min(0.0);
                outside + inside - rounding
            }
        }
    }

    /// Spatial gradient of the distance; unit length away from the skeleton.
    /// Central differences keep the box edges and shape axes well defined.
    pub fn grad(&self, p: Vec3) -> Vec3 {
        match *self {
            Shape::Sphere { .. } => {
                let n = p.norm();
                if n > 1e-12 {
                    p / n
                } else {
                    Vec3::new(1.0, 0.0, 0.0)
                }
            }
            Shape::Torus { major, .. } => {
                let rho = (p.x * p.x + p.y * p.y).sqrt();
                if rho < 1e-9 {
                    return self.fd_grad(p);
                }
                let ring = rho - major;
                let d = (ring * ring + p.z * p.z).sqrt();
                if d < 1e-9 {
                    return self.fd_grad(p);
                }
                Vec3::new(ring * p.x / (rho * d), ring * p.y / (rho * d), p.z / d)
            }
            Shape::RoundedBox { .. } => self.fd_grad(p),
        }
    }

    fn fd_grad(&self, p: Vec3) -> Vec3 {
        let h = 1e-6;
        let g = Vec3::new(
            self.sdf(Vec3::new(p.x + h, p.y, p.z)) - self.sdf(Vec3::new(p.x - h, p.y, p.z)),
            self.sdf(Vec3::new(p.x, p.y + h, p.z)) - self.sdf(Vec3::new(p.x, p.y - h, p.z)),
            self.sdf(Vec3::new(p.x, p.y, p.z + h)) - self.sdf(Vec3::new(p.x, p.y, p.z - h)),
        ) / (2.0 * h);
        g.normalized()
    }

    /// Radius of an origin-centered sphere containing the surface.
    pub fn bounding_radius(&self) -> S {
        match *self {
            Shape::Sphere { radius } => radius,
            Shape::Torus { major, minor } => major + minor,
            Shape::RoundedBox { half, rounding } => {
                Vec3::new(half[0], half[1], half[2]).norm() + rounding
            }
        }
    }
}
