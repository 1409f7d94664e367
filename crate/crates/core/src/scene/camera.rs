//! Pinhole cameras and rays.
//!
//! Convention: the stored rotation maps camera coordinates to world
//! coordinates and `t` is the camera center in world space, so a pixel at
//! depth `d` lifts to `p = R (d K^-1 [u, v, 1]^T) + t`. The camera frame is
//! x right, y down, z forward; depth means the camera-frame z coordinate,
//! not distance along the ray.

use crate::error::{Error, Result};
use crate::Vec3;
use crate::{Mat3, S};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit direction.
    pub dir: Vec3,
}

impl Ray {
    pub fn at(&self, t: S) -> Vec3 {
        self.origin + self.dir * t
    }
}

/// Entry and exit parameters of a ray against an origin-centered sphere,
/// `None` when the ray misses or the sphere is entirely behind the origin.
pub fn intersect_sphere(ray: &Ray, radius: S) -> Option<(S, S)> {
    let b = ray.origin.dot(ray.dir);
    let c = ray.origin.norm_sq() - radius * radius;
    let disc = b * b - c;
    if disc <= 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let (t0, t1) = (-b - sq, -b + sq);
    if t1 <= 0.0 {
        return None;
    }
    Some((t0.max(0.0), t1))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub k: Mat3,
    /// Camera-to-world rotation.
    pub r: Mat3,
    /// Camera center in world coordinates.
    pub t: Vec3,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Camera at `eye` looking toward `target`, with `up` fixing the roll so
    /// that image y points away from it.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, k: Mat3, width: usize, height: usize) -> Self {
        let z = (target - eye).normalized();
        let mut y = z * up.dot(z) - up;
        if y.norm() < 1e-9 {
            let alt = Vec3::new(1.0, 0.0, 0.0);
            y = z * alt.dot(z) - alt;
        }
        let y = y.normalized();
        let x = y.cross(z);
        Camera {
            k,
            r: Mat3::from_cols(x, y, z),
            t: eye,
            width,
            height,
        }
    }

    fn k_inv(&self) -> Mat3 {
        self.k
            .inverse()
            .expect("intrinsic matrix is invertible by construction")
    }

    /// Ray through continuous pixel coordinates; `(u + 0.5, v + 0.5)` is the
    /// center of pixel `(u, v)`.
    pub fn ray_through_pixel(&self, u: S, v: S) -> Ray {
        let d_cam = self.k_inv().mul_vec(Vec3::new(u, v, 1.0));
        Ray {
            origin: self.t,
            dir: self.r.mul_vec(d_cam).normalized(),
        }
    }

    /// World point of pixel `(u, v)` at camera-frame depth `d`.
    pub fn lift(&self, u: S, v: S, depth: S) -> Vec3 {
        let d_cam = self.k_inv().mul_vec(Vec3::new(u, v, 1.0)) * depth;
        self.r.mul_vec(d_cam) + self.t
    }

    /// `(u, v, depth)` of a world point, or `None` if it is not in front of
    /// the camera.
    pub fn project(&self, p: Vec3) -> Option<(S, S, S)> {
        let pc = self.r.transpose().mul_vec(p - self.t);
        if pc.z <= 1e-12 {
            return None;
        }
        let q = self.k.mul_vec(pc);
        Some((q.x / q.z, q.y / q.z, pc.z))
    }

    /// Camera-frame depth of a world point (may be negative behind the eye).
    pub fn depth_of(&self, p: Vec3) -> S {
        self.r.transpose().mul_vec(p - self.t).z
    }

    /// Validates orthonormality and intrinsic invertibility.
    pub fn validate(&self) -> Result<()> {
        if self.r.orthonormality_defect() > 1e-9 {
            return Err(Error::Config("camera rotation is not orthonormal".into()));
        }
        if self.k.inverse().is_none() {
            return Err(Error::Config("camera intrinsics are singular".into()));
        }
        if self.r.det() < 0.0 {
            return Err(Error::Config("camera rotation is a reflection".into()));
        }
        Ok(())
    }
}

/// Intrinsics with focal `f` (pixels) and principal point `(cx, cy)`.
pub fn intrinsics(f: S, cx: S, cy: S) -> Mat3 {
    Mat3::from_rows([f, 0.0, cx], [0.0, f, cy], [0.0, 0.0, 1.0])
}
