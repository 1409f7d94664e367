//! Sphere tracing against analytic distance fields.

use crate::scene::camera::Ray;
use crate::scene::shape::Shape;
use crate::S;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TraceResult {
    /// Surface found at ray parameter `t`.
    Hit { t: S },
    /// Ray left the search interval without finding the surface.
    Miss,
    /// Step budget exhausted, usually a grazing ray.
    MaxSteps,
}

pub const TRACE_EPS: S = 1e-6;
pub const TRACE_MAX_STEPS: usize = 512;

/// Marches from `t0` to `t1` along the ray. Assumes the start point is
/// outside the surface; exact distances make plain stepping safe.
pub fn sphere_trace(shape: &Shape, ray: &Ray, t0: S, t1: S) -> TraceResult {
    let mut t = t0;
    for _ in 0..TRACE_MAX_STEPS {
        let d = shape.sdf(ray.at(t));
        if d.abs() < TRACE_EPS {
            return TraceResult::Hit { t };
        }
        t += d;
        if t > t1 {
            return TraceResult::Miss;
        }
    }
    TraceResult::MaxSteps
}

/// True when marching from `p` toward the unit direction `l` hits the shape
/// within `max_t`. The start point is lifted off the surface by the caller.
pub fn occluded(shape: &Shape, p: crate::Vec3, l: crate::Vec3, max_t: S) -> bool {
    let ray = Ray { origin: p, dir: l };
    matches!(sphere_trace(shape, &ray, 0.0, max_t), TraceResult::Hit { .. })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Vec3;

    #[test]
    fn hits_sphere_at_analytic_distance() {
        let s = Shape::Sphere { radius: 1.0 };
        let ray = Ray {
            origin: Vec3::new(-3.0, 0.0, 0.0),
            dir: Vec3::new(1.0, 0.0, 0.0),
        };
        match sphere_trace(&s, &ray, 0.0, 10.0) {
            TraceResult::Hit { t } => assert!((t - 2.0).abs() < 1e-5),
            other => panic!("expected hit, got {other:?}"),
        }
    }

    #[test]
    fn reports_miss_for_rays_outside_silhouette() {
        let s = Shape::Sphere { radius: 1.0 };
        let ray = Ray {
            origin: Vec3::new(-3.0, 2.0, 0.0),
            dir: Vec3::new(1.0, 0.0, 0.0),
        };
        assert_eq!(sphere_trace(&s, &ray, 0.0, 10.0), TraceResult::Miss);
    }

    #[test]
    fn torus_center_ray_passes_through_hole() {
        let s = Shape::Torus {
            major: 1.0,
            minor: 0.25,
        };
        let ray = Ray {
            origin: Vec3::new(0.0, 0.0, -3.0),
            dir: Vec3::new(0.0, 0.0, 1.0),
        };
        assert_eq!(sphere_trace(&s, &ray, 0.0, 10.0), TraceResult::Miss);
        let hit_ray = Ray {
            origin: Vec3::new(1.0, 0.0, -3.0),
            dir: Vec3::new(0.0, 0.0, 1.0),
        };
        match sphere_trace(&s, &hit_ray, 0.0, 10.0) {
            TraceResult::Hit { t } => assert!((t - 2.75).abs() < 1e-5),
            other => panic!("expected hit, got {other:?}"),
        }
    }

    #[test]
    fn shadow_test_detects_occlusion_on_torus() {
        let s = Shape::Torus {
            major: 1.0,
            minor: 0.25,
        };
        // Inner point of the ring looking across the hole toward the other
        // side: occluded. Looking straight up: free.
        let p = Vec3::new(0.75, 0.0, 0.0);
        let n = Vec3::new(-1.0, 0.0, 0.0);
        let start = p + n * 1e-4;
        assert!(occluded(&s, start, Vec3::new(-1.0, 0.0, 0.0), 10.0));
        assert!(!occluded(&s, start, Vec3::new(0.0, 0.0, 1.0), 10.0));
    }
}
