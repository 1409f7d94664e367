//! Uncertainty gates deciding, per pixel, which supervision applies.
//!
//! A pixel trusts its depth prior only when the matcher's confidence strictly
//! exceeds the depth threshold, and trusts its normal prior only when the
//! ensemble variance stays strictly below the normal threshold. Both gates
//! are forced off outside the silhouette. Strict comparisons make exact
//! boundary values fall on the untrusted side.

use crate::img::ImageF;
use crate::priors::mvs::MvsPrior;
use crate::priors::ps::PsPrior;
use crate::scene::camera::Camera;
use crate::{Vec3, S};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    /// Depth prior engages when confidence is strictly above this.
    pub tau_mvs: S,
    /// Normal prior engages when the variance L1 norm is strictly below this.
    pub tau_ps: S,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            tau_mvs: 0.9,
            tau_ps: 0.03,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Gates {
    /// 1 where the depth prior is trusted, else 0.
    pub mvs: ImageF,
    /// 1 where the normal prior is trusted, else 0.
    pub ps: ImageF,
}

pub fn compute_gates(
    mvs: &MvsPrior,
    ps: &PsPrior,
    mask: &ImageF,
    cfg: &GateConfig,
) -> Gates {
    let (w, h) = (mask.width(), mask.height());
    let mut gm = ImageF::new(w, h, 1);
    let mut gp = ImageF::new(w, h, 1);
    for y in 0..h {
        for x in 0..w {
            if mask.at(x, y, 0) < 0.5 {
                continue;
            }
            if mvs.confidence.at(x, y, 0) > cfg.tau_mvs {
                gm.set(x, y, 0, 1.0);
            }
            let var_l1: S = (0..3).map(|c| ps.variance.at(x, y, c).abs()).sum();
            if var_l1 < cfg.tau_ps {
                gp.set(x, y, 0, 1.0);
            }
        }
    }
    Gates { mvs: gm, ps: gp }
}

/// A pixel carrying at least one trusted prior, lifted to world space.
#[derive(Clone, Copy, Debug)]
pub struct GatedPixel {
    pub x: usize,
    pub y: usize,
    /// World point on the prior depth along the pixel ray; meaningful only
    /// when `use_depth` is set.
    pub point: Vec3,
    pub normal: Vec3,
    pub use_depth: bool,
    pub use_normal: bool,
}

/// Collects every pixel with an open gate, lifting trusted depths through
/// the camera at the pixel center.
pub fn lift_gated_pixels(
    cam: &Camera,
    mvs: &MvsPrior,
    ps: &PsPrior,
    gates: &Gates,
) -> Vec<GatedPixel> {
    let mut out = Vec::new();
    for y in 0..gates.mvs.height() {
        for x in 0..gates.mvs.width() {
            let use_depth = gates.mvs.at(x, y, 0) > 0.5;
            let use_normal = gates.ps.at(x, y, 0) > 0.5;
            if !use_depth && !use_normal {
                continue;
            }
            let point = if use_depth {
                cam.lift(x as S + 0.5, y as S + 0.5, mvs.depth.at(x, y, 0))
            } else {
                Vec3::zero()
            };
            let normal = Vec3::new(
                ps.normal.at(x, y, 0),
                ps.normal.at(x, y, 1),
                ps.normal.at(x, y, 2),
            );
            out.push(GatedPixel {
                x,
                y,
                point,
                normal,
                use_depth,
                use_normal,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_priors(w: usize, h: usize, conf: S, var: S) -> (MvsPrior, PsPrior, ImageF) {
        let mut confidence = ImageF::new(w, h, 1);
        let mut depth = ImageF::new(w, h, 1);
        let mut distinguishability = ImageF::new(w, h, 1);
        let mut variance = ImageF::new(w, h, 3);
        let mut normal = ImageF::new(w, h, 3);
        let mut mask = ImageF::new(w, h, 1);
        for y in 0..h {
            for x in 0..w {
                confidence.set(x, y, 0, conf);
                depth.set(x, y, 0, 2.0);
                distinguishability.set(x, y, 0, 1.0);
                for c in 0..3 {
                    variance.set(x, y, c, var / 3.0);
                }
                normal.set(x, y, 2, 1.0);
                mask.set(x, y, 0, 1.0);
            }
        }
        (
            MvsPrior {
                depth,
                confidence,
                distinguishability,
            },
            PsPrior { normal, variance },
            mask,
        )
    }

    #[test]
    fn thresholds_are_strict_on_both_sides() {
        let cfg = GateConfig::default();
        // Exactly at both thresholds: both gates must stay closed.
        let (mvs, ps, mask) = uniform_priors(4, 4, cfg.tau_mvs, cfg.tau_ps);
        let g = compute_gates(&mvs, &ps, &mask, &cfg);
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(g.mvs.at(x, y, 0), 0.0);
                assert_eq!(g.ps.at(x, y, 0), 0.0);
            }
        }
        // Nudged to the trusted side: both open.
        let (mvs, ps, mask) = uniform_priors(4, 4, cfg.tau_mvs + 1e-9, cfg.tau_ps - 1e-9);
        let g = compute_gates(&mvs, &ps, &mask, &cfg);
        assert_eq!(g.mvs.at(0, 0, 0), 1.0);
        assert_eq!(g.ps.at(0, 0, 0), 1.0);
    }

    #[test]
    fn gates_are_zero_outside_mask() {
        let cfg = GateConfig::default();
        let (mvs, ps, mut mask) = uniform_priors(4, 4, 0.99, 0.001);
        mask.set(1, 2, 0, 0.0);
        let g = compute_gates(&mvs, &ps, &mask, &cfg);
        assert_eq!(g.mvs.at(1, 2, 0), 0.0);
        assert_eq!(g.ps.at(1, 2, 0), 0.0);
        assert_eq!(g.mvs.at(0, 0, 0), 1.0);
    }

    #[test]
    fn lifted_points_land_on_the_pixel_ray() {
        use crate::scene::camera::{intrinsics, Camera};
        let cam = Camera::look_at(
            Vec3::new(0.0, 0.0, -4.0),
            Vec3::zero(),
            Vec3::new(0.0, 1.0, 0.0),
            intrinsics(12.0, 4.0, 4.0),
            8,
            8,
        );
        let cfg = GateConfig::default();
        let (mvs, ps, mask) = uniform_priors(8, 8, 0.99, 0.001);
        let g = compute_gates(&mvs, &ps, &mask, &cfg);
        let lifted = lift_gated_pixels(&cam, &mvs, &ps, &g);
        assert_eq!(lifted.len(), 64);
        for gp in &lifted {
            assert!(gp.use_depth && gp.use_normal);
            let (u, v, z) = cam.project(gp.point).unwrap();
            assert!((u - (gp.x as S + 0.5)).abs() < 1e-9);
            assert!((v - (gp.y as S + 0.5)).abs() < 1e-9);
            assert!((z - 2.0).abs() < 1e-9);
        }
    }
}
