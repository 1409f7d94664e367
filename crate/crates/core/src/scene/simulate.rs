//! Renders one view of an analytic scene under every light, and derives the
//! median image, mask, and ground-truth depth and normal maps.

use crate::img::{median_stack, ImageF};
use crate::Vec3;
use crate::scene::brdf::Material;
use crate::scene::camera::intersect_sphere;
use crate::scene::rig::ViewSetup;
use crate::scene::shape::Shape;
use crate::scene::trace::{occluded, sphere_trace, TraceResult};
use crate::S;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// What the simulator images: a shape, its material, and sensor noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub shape: Shape,
    pub material: Material,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise_std: S,
}

/// One fully rendered view.
#[derive(Clone, Debug)]
pub struct RenderedView {
    /// One rgb image per light.
    pub images: Vec<ImageF>,
    /// Per-pixel median over the light stack.
    pub median: ImageF,
    /// 1.0 where the pixel-center ray hits the surface.
    pub mask: ImageF,
    /// Camera-frame z depth; 0 outside the mask.
    pub depth: ImageF,
    /// World-frame unit normals; 0 outside the mask.
    pub normal: ImageF,
    /// Rays that exhausted the tracing step budget, for diagnostics.
    pub max_step_rays: usize,
}

const SHADOW_LIFT: S = 1e-4;

/// Renders `view` deterministically for the given noise seed.
pub fn render_view(spec: &SceneSpec, view: &ViewSetup, noise_seed: u64) -> RenderedView {
    let cam = &view.camera;
    let (w, h) = (cam.width, cam.height);
    let nl = view.light_dirs.len();
    let rb = spec.shape.bounding_radius();
    let t_max = 2.0 * cam.t.norm() + 2.0 * rb;

    let mut images = vec![ImageF::new(w, h, 3); nl];
    let mut mask = ImageF::new(w, h, 1);
    let mut depth = ImageF::new(w, h, 1);
    let mut normal = ImageF::new(w, h, 3);
    let mut max_step_rays = 0;

    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let noise = (spec.noise_std > 0.0)
        .then(|| Normal::new(0.0, spec.noise_std).expect("valid noise std"));

    for y in 0..h {
        for x in 0..w {
            let ray = cam.ray_through_pixel(x as S + 0.5, y as S + 0.5);
            let span = intersect_sphere(&ray, rb * 1.05);
            let hit = span.and_then(|(t0, t1)| {
                match sphere_trace(&spec.shape, &ray, t0, t1.min(t_max)) {
                    TraceResult::Hit { t } => Some(t),
                    TraceResult::Miss => None,
                    TraceResult::MaxSteps => {
                        max_step_rays += 1;
                        None
                    }
                }
            });
            if let Some(t) = hit {
                let p = ray.at(t);
                let n = spec.shape.grad(p).normalized();
                let v_dir = -ray.dir;
                mask.set(x, y, 0, 1.0);
                depth.set(x, y, 0, cam.depth_of(p));
                for c in 0..3 {
                    normal.set(x, y, c, n[c]);
                }
                let lift = p + n * SHADOW_LIFT;
                for (j, (&l, &e)) in view
                    .light_dirs
                    .iter()
                    .zip(&view.light_intensities)
                    .enumerate()
                {
                    let cos = n.dot(l).max(0.0);
                    let lit = cos > 0.0 && !occluded(&spec.shape, lift, l, t_max);
                    let rgb = if lit {
                        spec.material.eval(p, n, l, v_dir) * (e * cos)
                    } else {
                        Vec3::zero()
                    };
                    let px = images[j].pixel_mut(x, y);
                    for c in 0..3 {
                        px[c] = rgb[c];
                    }
                }
            }
            // Sensor noise falls on every pixel of every exposure, object or
            // background, in a fixed draw order for reproducibility.
            if let Some(noise) = noise {
                for img in images.iter_mut() {
                    let px = img.pixel_mut(x, y);
                    for c in 0..3 {
                        px[c] = (px[c] + noise.sample(&mut rng)).max(0.0);
                    }
                }
            }
        }
    }

    let median = median_stack(&images);
    RenderedView {
        images,
        median,
        mask,
        depth,
        normal,
        max_step_rays,
    }
}
