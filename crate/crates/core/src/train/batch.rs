//! Per-epoch ray batch assembly.
//!
//! Each epoch draws a fixed number of pixels from every view and routes each
//! one to the loss terms its gates admit. Rays are reordered so that all
//! photometrically supervised rays lead the batch; the renderer evaluates
//! radiance only for that leading block. Rays that miss the bounding sphere
//! carry no samples; they contribute constants to the affected terms and are
//! excluded from the rendered batch.

use crate::fields::net::FieldPair;
use crate::img::ImageF;
use crate::mat::Mat;
use crate::priors::gate::Gates;
use crate::render::renderer::RenderPlan;
use crate::render::sampling::plan_samples;
use crate::scene::camera::Camera;
use crate::train::config::TrainConfig;
use crate::{ParamSetS, Vec3, S};
use rand::Rng;

/// Everything the trainer needs from one view: the supervision image under
/// the chosen light, the silhouette, the gates, and the priors they guard.
#[derive(Clone, Debug)]
pub struct TrainView {
    pub camera: Camera,
    pub target: ImageF,
    pub mask: ImageF,
    pub gates: Gates,
    pub prior_depth: ImageF,
    pub prior_normal: ImageF,
}

impl TrainView {
    pub fn validate(&self) -> crate::Result<()> {
        let (w, h) = (self.camera.width, self.camera.height);
        let dims_ok = |im: &ImageF, ch: usize| im.width() == w && im.height() == h && im.channels() == ch;
        if !dims_ok(&self.target, 3)
            || !dims_ok(&self.mask, 1)
            || !dims_ok(&self.gates.mvs, 1)
            || !dims_ok(&self.gates.ps, 1)
            || !dims_ok(&self.prior_depth, 1)
            || !dims_ok(&self.prior_normal, 3)
        {
            return Err(crate::Error::Config(
                "view image dimensions disagree with the camera".into(),
            ));
        }
        Ok(())
    }
}

/// One view's share of an epoch: the renderable rays in block order plus the
/// bookkeeping for pixels whose rays never reach the tape.
pub struct ViewPlan {
    pub plan: RenderPlan,
    /// `[n_render x 3]` target colors for the leading block.
    pub targets: Mat<S>,
    /// Sum of |target| over photometrically supervised rays that missed the
    /// bounding sphere; those rays render to black by construction.
    pub render_miss_abs: S,
    /// Photometrically supervised pixels including sphere misses.
    pub n_render_total: usize,
    /// `[k x 3]` world points lifted through trusted depths.
    pub mvs_points: Mat<S>,
    /// Rows of the rendered batch with a trusted normal.
    pub ps_rows: Vec<usize>,
    /// `[k x 3]` trusted prior normals aligned with `ps_rows`.
    pub ps_targets: Mat<S>,
    /// Rows of the rendered batch outside the silhouette.
    pub outside_rows: Vec<usize>,
    /// Outside-silhouette pixels including sphere misses.
    pub n_outside_total: usize,
}

/// Global denominators of the epoch objective; fixed before any network
/// evaluation so per-view passes can be combined exactly.
#[derive(Clone, Copy, Debug, Default)]
pub struct Counts {
    pub mvs: usize,
    pub ps: usize,
    pub render: usize,
    pub outside: usize,
    /// Ray samples plus fresh uniform points.
    pub eikonal: usize,
}

pub struct EpochPlan {
    pub views: Vec<ViewPlan>,
    /// `[n x 3]` fresh uniform points for the unit-gradient penalty.
    pub uniform_pts: Mat<S>,
    pub counts: Counts,
}

struct Draw {
    ray_index: usize,
    target: [S; 3],
    inside: bool,
    render_sup: bool,
    ps_normal: Option<Vec3>,
}

fn build_view_plan(
    view: &TrainView,
    pair: &FieldPair,
    set: &ParamSetS,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> ViewPlan {
    let (w, h) = (view.camera.width, view.camera.height);
    let mut rays = Vec::with_capacity(cfg.rays_per_view);
    let mut draws = Vec::with_capacity(cfg.rays_per_view);
    let mut mvs_points = Vec::new();

    for _ in 0..cfg.rays_per_view {
        let x = rng.gen_range(0..w);
        let y = rng.gen_range(0..h);
        let inside = view.mask.at(x, y, 0) > 0.5;
        let (gm, gp) = if cfg.ablation.no_uncertainty {
            (inside, inside)
        } else {
            (
                view.gates.mvs.at(x, y, 0) > 0.5,
                view.gates.ps.at(x, y, 0) > 0.5,
            )
        };
        // Photometric supervision covers every pixel not claimed by both
        // priors at once; ignoring uncertainty re-enables it everywhere.
        let render_sup = !(gm && gp) || cfg.ablation.no_uncertainty;
        if gm {
            let p = view
                .camera
                .lift(x as S + 0.5, y as S + 0.5, view.prior_depth.at(x, y, 0));
            mvs_points.push(p);
        }
        let ps_normal = if gp {
            Some(Vec3::new(
                view.prior_normal.at(x, y, 0),
                view.prior_normal.at(x, y, 1),
                view.prior_normal.at(x, y, 2),
            ))
        } else {
            None
        };
        let ray_index = rays.len();
        rays.push(view.camera.ray_through_pixel(x as S + 0.5, y as S + 0.5));
        draws.push(Draw {
            ray_index,
            target: [
                view.target.at(x, y, 0),
                view.target.at(x, y, 1),
                view.target.at(x, y, 2),
            ],
            inside,
            render_sup,
            ps_normal,
        });
    }

    let samples = plan_samples(pair, set, &rays, &cfg.sample, rng);

    // Stable two-block reorder: photometrically supervised rays first.
    let mut ordered_rays = Vec::new();
    let mut ordered_samples = Vec::new();
    let mut targets = Vec::new();
    let mut ps_rows = Vec::new();
    let mut ps_targets = Vec::new();
    let mut outside_rows = Vec::new();
    let mut render_miss_abs = 0.0;
    let mut n_render_total = 0;
    let mut n_outside_total = 0;

    let place = |d: &Draw,
                     row: usize,
                     ps_rows: &mut Vec<usize>,
                     ps_targets: &mut Vec<S>,
                     outside_rows: &mut Vec<usize>| {
        if let Some(n) = d.ps_normal {
            ps_rows.push(row);
            ps_targets.extend_from_slice(&[n.x, n.y, n.z]);
        }
        if !d.inside {
            outside_rows.push(row);
        }
    };

    for pass in 0..2 {
        for d in &draws {
            if (pass == 0) != d.render_sup {
                continue;
            }
            if d.render_sup {
                n_render_total += 1;
            }
            if !d.inside {
                n_outside_total += 1;
            }
            match &samples[d.ray_index] {
                Some(s) => {
                    let row = ordered_rays.len();
                    ordered_rays.push(rays[d.ray_index]);
                    ordered_samples.push(s.clone());
                    if d.render_sup {
                        targets.extend_from_slice(&d.target);
                    }
                    place(d, row, &mut ps_rows, &mut ps_targets, &mut outside_rows);
                }
                None => {
                    // Off-sphere ray: renders to black, opacity zero. The
                    // color residual is a parameter-free constant; the
                    // cross-entropy contribution is exactly zero.
                    if d.render_sup {
                        render_miss_abs += d.target.iter().map(|c| c.abs()).sum::<S>();
                    }
                }
            }
        }
        if pass == 0 {
            debug_assert!(targets.len() == 3 * ordered_rays.len());
        }
    }
    let n_render = targets.len() / 3;

    let mvs_mat = Mat::from_fn(mvs_points.len(), 3, |i, c| mvs_points[i][c]);
    let k = ps_rows.len();
    ViewPlan {
        plan: RenderPlan::new(ordered_rays, ordered_samples, n_render),
        targets: Mat::from_vec(n_render, 3, targets),
        render_miss_abs,
        n_render_total,
        mvs_points: mvs_mat,
        ps_rows,
        ps_targets: Mat::from_vec(k, 3, ps_targets),
        outside_rows,
        n_outside_total,
    }
}

pub fn build_epoch_plan(
    views: &[TrainView],
    pair: &FieldPair,
    set: &ParamSetS,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> EpochPlan {
    let mut plans = Vec::with_capacity(views.len());
    for v in views {
        plans.push(build_view_plan(v, pair, set, cfg, rng));
    }
    let r = cfg.sample.sphere_radius;
    let n2 = cfg.eikonal_samples;
    let uniform_pts = Mat::from_fn(n2, 3, |_, _| rng.gen_range(-r..r));

    let mut counts = Counts::default();
    for p in &plans {
        counts.mvs += p.mvs_points.rows();
        counts.ps += p.ps_rows.len();
        counts.render += p.n_render_total;
        counts.outside += p.n_outside_total;
        counts.eikonal += p.plan.n_rays() * p.plan.per_ray();
    }
    counts.eikonal += n2;
    EpochPlan {
        views: plans,
        uniform_pts,
        counts,
    }
}
