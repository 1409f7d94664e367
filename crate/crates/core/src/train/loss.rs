//! The five-term training objective.
//!
//! Terms: trusted depths pin the signed distance to zero at lifted points;
//! trusted normals align the volume-rendered normal; pixels not claimed by
//! both priors at once are supervised photometrically in L1; rays outside
//! the silhouette pay cross-entropy on their opacity; and a unit-gradient
//! penalty over ray samples plus fresh uniform points keeps the field an
//! approximate signed distance.
//!
//! Each view runs on its own tape against the same parameter snapshot; the
//! per-view partial objectives use the epoch-global denominators, so summing
//! per-view gradients reproduces the gradient of the full epoch mean exactly.

use crate::autodiff::{NodeId, Tape, TapeBinding};
use crate::error::{Error, Result};
use crate::fields::net::FieldPair;
use crate::mat::Mat;
use crate::render::renderer::render_batch;
use crate::train::batch::{Counts, EpochPlan, ViewPlan};
use crate::train::config::TrainConfig;
use crate::{ParamSetS, S};

/// Epoch-mean value of every term; `total` is their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TermValues {
    pub mvs: S,
    pub ps: S,
    pub render: S,
    pub mask: S,
    pub eikonal: S,
    pub total: S,
}

/// Raw per-view term sums before division by the epoch denominators.
#[derive(Clone, Copy, Debug, Default)]
struct TermSums {
    mvs: S,
    ps: S,
    render: S,
    mask: S,
    eikonal: S,
}

/// Per-row Euclidean norm guarded against the non-differentiable origin.
fn row_norm_eps(tape: &mut Tape<S>, a: NodeId) -> Result<NodeId> {
    let sq = tape.square(a)?;
    let s = tape.row_sum(sq)?;
    let s = tape.add_const(s, 1e-12)?;
    Ok(tape.sqrt(s)?)
}

/// Sum of binary cross-entropy against an empty target: -ln(1 - o) per row.
/// Callers pass opacities already clamped inside (0, 1).
pub fn bce_empty_sum(tape: &mut Tape<S>, opacity: NodeId) -> Result<NodeId> {
    let om = tape.one_minus(opacity)?;
    let ln = tape.ln(om)?;
    let neg = tape.neg(ln)?;
    Ok(tape.sum_all(neg)?)
}

/// Sum of squared unit-length deviation of gradient rows.
fn eikonal_sum(tape: &mut Tape<S>, grads: NodeId) -> Result<NodeId> {
    let n = row_norm_eps(tape, grads)?;
    let d = tape.add_const(n, -1.0)?;
    let sq = tape.square(d)?;
    Ok(tape.sum_all(sq)?)
}

struct ViewPass {
    tape: Tape<S>,
    binding: TapeBinding,
    root: Option<NodeId>,
    sums: TermSums,
}

/// Builds one view's share of the objective on a fresh tape. Returns the
/// scalar root (absent when nothing on this view is supervised) and the raw
/// sums for logging.
fn view_pass(
    pair: &FieldPair,
    set: &ParamSetS,
    vp: &ViewPlan,
    counts: &Counts,
    cfg: &TrainConfig,
) -> Result<ViewPass> {
    let mut tape = Tape::new();
    let binding = set.bind(&mut tape)?;
    let mut sums = TermSums::default();
    let mut terms: Vec<NodeId> = Vec::new();

    if vp.plan.n_rays() > 0 {
        let nodes = render_batch(&mut tape, &binding, pair, &vp.plan)?;

        if !cfg.ablation.no_render && counts.render > 0 {
            let mut render = None;
            if let Some(color) = nodes.color {
                let tgt = tape.constant(vp.targets.clone())?;
                let diff = tape.sub(color, tgt)?;
                let l1 = tape.abs(diff)?;
                render = Some(tape.sum_all(l1)?);
            }
            if vp.render_miss_abs > 0.0 || render.is_none() {
                let c = tape.constant_scalar(vp.render_miss_abs)?;
                render = Some(match render {
                    Some(r) => tape.add(r, c)?,
                    None => c,
                });
            }
            let render = render.expect("render sum node");
            sums.render = tape.value(render).at(0, 0);
            let w = tape.scale(render, 1.0 / counts.render as S)?;
            terms.push(w);
        }

        if !cfg.ablation.no_ps && !vp.ps_rows.is_empty() {
            let n_sel = tape.gather_rows(nodes.normal, vp.ps_rows.clone())?;
            let tgt = tape.constant(vp.ps_targets.clone())?;
            let diff = tape.sub(n_sel, tgt)?;
            let norms = row_norm_eps(&mut tape, diff)?;
            let ps = tape.sum_all(norms)?;
            sums.ps = tape.value(ps).at(0, 0);
            let w = tape.scale(ps, 1.0 / counts.ps as S)?;
            terms.push(w);
        }

        if !vp.outside_rows.is_empty() && counts.outside > 0 && cfg.lambda_mask > 0.0 {
            let o_sel = tape.gather_rows(nodes.opacity, vp.outside_rows.clone())?;
            let mask = bce_empty_sum(&mut tape, o_sel)?;
            sums.mask = tape.value(mask).at(0, 0);
            let w = tape.scale(mask, cfg.lambda_mask / counts.outside as S)?;
            terms.push(w);
        }

        if cfg.lambda_eikonal > 0.0 && counts.eikonal > 0 {
            let eik = eikonal_sum(&mut tape, nodes.grad_all)?;
            sums.eikonal = tape.value(eik).at(0, 0);
            let w = tape.scale(eik, cfg.lambda_eikonal / counts.eikonal as S)?;
            terms.push(w);
        }
    }

    if !cfg.ablation.no_mvs && vp.mvs_points.rows() > 0 {
        // Value-only pass: the depth prior constrains f itself, not its
        // spatial gradient, so the Jacobian stream is skipped.
        let out = pair
            .sdf
            .eval_tape(&mut tape, &binding, &vp.mvs_points, false)?;
        let a = tape.abs(out.sdf)?;
        let mvs = tape.sum_all(a)?;
        sums.mvs = tape.value(mvs).at(0, 0);
        let w = tape.scale(mvs, 1.0 / counts.mvs as S)?;
        terms.push(w);
    }

    let root = match terms.len() {
        0 => None,
        _ => {
            let mut acc = terms[0];
            for &t in &terms[1..] {
                acc = tape.add(acc, t)?;
            }
            Some(acc)
        }
    };
    Ok(ViewPass {
        tape,
        binding,
        root,
        sums,
    })
}

/// Unit-gradient penalty over the fresh uniform points, on its own tape.
fn uniform_pass(
    pair: &FieldPair,
    set: &ParamSetS,
    pts: &Mat<S>,
    counts: &Counts,
    cfg: &TrainConfig,
) -> Result<Option<ViewPass>> {
    if pts.rows() == 0 || cfg.lambda_eikonal <= 0.0 || counts.eikonal == 0 {
        return Ok(None);
    }
    let mut tape = Tape::new();
    let binding = set.bind(&mut tape)?;
    let out = pair.sdf.eval_tape(&mut tape, &binding, pts, true)?;
    let grads = out.grad.expect("gradient requested");
    let eik = eikonal_sum(&mut tape, grads)?;
    let sums = TermSums {
        eikonal: tape.value(eik).at(0, 0),
        ..Default::default()
    };
    let w = tape.scale(eik, cfg.lambda_eikonal / counts.eikonal as S)?;
    Ok(Some(ViewPass {
        tape,
        binding,
        root: Some(w),
        sums,
    }))
}

fn finish(acc: TermSums, counts: &Counts, cfg: &TrainConfig) -> Result<TermValues> {
    let safe = |sum: S, n: usize| if n == 0 { 0.0 } else { sum / n as S };
    let mut v = TermValues {
        mvs: safe(acc.mvs, counts.mvs),
        ps: safe(acc.ps, counts.ps),
        render: safe(acc.render, counts.render),
        mask: cfg.lambda_mask * safe(acc.mask, counts.outside),
        eikonal: cfg.lambda_eikonal * safe(acc.eikonal, counts.eikonal),
        ..Default::default()
    };
    if counts.outside == 0 {
        log::warn!("epoch batch contains no rays outside the silhouette");
    }
    v.total = v.mvs + v.ps + v.render + v.mask + v.eikonal;
    if !v.total.is_finite() {
        return Err(Error::Train(format!("non-finite loss: {v:?}")));
    }
    Ok(v)
}

/// Evaluates the epoch objective without touching gradients.
pub fn epoch_loss_value(
    pair: &FieldPair,
    set: &ParamSetS,
    plan: &EpochPlan,
    cfg: &TrainConfig,
) -> Result<TermValues> {
    let mut acc = TermSums::default();
    for vp in &plan.views {
        let pass = view_pass(pair, set, vp, &plan.counts, cfg)?;
        accumulate_sums(&mut acc, &pass.sums);
    }
    if let Some(pass) = uniform_pass(pair, set, &plan.uniform_pts, &plan.counts, cfg)? {
        accumulate_sums(&mut acc, &pass.sums);
    }
    finish(acc, &plan.counts, cfg)
}

/// Evaluates the epoch objective and accumulates its gradient into `set`.
/// Existing gradients are cleared first; the caller applies the optimizer
/// step. A non-finite objective aborts before any gradient is written.
pub fn epoch_gradients(
    pair: &FieldPair,
    set: &mut ParamSetS,
    plan: &EpochPlan,
    cfg: &TrainConfig,
) -> Result<TermValues> {
    set.zero_grads();
    let mut acc = TermSums::default();
    for vp in &plan.views {
        let mut pass = view_pass(pair, set, vp, &plan.counts, cfg)?;
        check_finite(&pass.sums)?;
        accumulate_sums(&mut acc, &pass.sums);
        if let Some(root) = pass.root {
            pass.tape.backward(root)?;
            set.accumulate_grads(&pass.tape, &pass.binding);
        }
    }
    if let Some(mut pass) = uniform_pass(pair, set, &plan.uniform_pts, &plan.counts, cfg)? {
        check_finite(&pass.sums)?;
        accumulate_sums(&mut acc, &pass.sums);
        if let Some(root) = pass.root {
            pass.tape.backward(root)?;
            set.accumulate_grads(&pass.tape, &pass.binding);
        }
    }
    finish(acc, &plan.counts, cfg)
}

fn accumulate_sums(acc: &mut TermSums, s: &TermSums) {
    acc.mvs += s.mvs;
    acc.ps += s.ps;
    acc.render += s.render;
    acc.mask += s.mask;
    acc.eikonal += s.eikonal;
}

fn check_finite(s: &TermSums) -> Result<()> {
    let all = [s.mvs, s.ps, s.render, s.mask, s.eikonal];
    if all.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Train(format!("non-finite term sums: {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::AdamConfig;
    use crate::fields::config::FieldConfig;
    use crate::img::ImageF;
    use crate::priors::gate::Gates;
    use crate::render::renderer::render_batch_raw;
    use crate::scene::brdf::{Albedo, Brdf, Material};
    use crate::scene::rig::{build_rig, RigConfig};
    use crate::scene::shape::Shape;
    use crate::scene::simulate::{render_view, SceneSpec};
    use crate::train::batch::{build_epoch_plan, TrainView};
    use crate::train::config::AblationFlags;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn micro_cfg() -> FieldConfig {
        FieldConfig {
            pos_octaves: 2,
            dir_octaves: 1,
            sdf_layers: 2,
            sdf_width: 16,
            feature_dim: 8,
            skip_layer: 0,
            radiance_layers: 2,
            radiance_width: 16,
            ..FieldConfig::default()
        }
    }

    fn micro_pair(seed: u64) -> (FieldPair, ParamSetS) {
        let mut set = ParamSetS::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pair = FieldPair::init(micro_cfg(), &mut set, &mut rng).unwrap();
        (pair, set)
    }

    fn scene_view(gate_all: bool) -> TrainView {
        let rig = RigConfig {
            views: 1,
            lights: 4,
            width: 20,
            height: 20,
            ..RigConfig::default()
        };
        let views = build_rig(&rig, 1.0).unwrap();
        let spec = SceneSpec {
            shape: Shape::Sphere { radius: 1.0 },
            material: Material {
                albedo: Albedo::Constant { rgb: [0.6, 0.6, 0.6] },
                brdf: Brdf::Lambertian,
            },
            noise_std: 0.0,
        };
        let rv = render_view(&spec, &views[0], 1);
        let mut gm = ImageF::new(20, 20, 1);
        let mut gp = ImageF::new(20, 20, 1);
        let mut depth = ImageF::new(20, 20, 1);
        let mut normal = ImageF::new(20, 20, 3);
        for y in 0..20 {
            for x in 0..20 {
                if rv.mask.at(x, y, 0) > 0.5 {
                    if gate_all {
                        gm.set(x, y, 0, 1.0);
                        gp.set(x, y, 0, 1.0);
                    }
                    depth.set(x, y, 0, rv.depth.at(x, y, 0));
                    for c in 0..3 {
                        normal.set(x, y, c, rv.normal.at(x, y, c));
                    }
                }
            }
        }
        TrainView {
            camera: views[0].camera.clone(),
            target: rv.images[0].clone(),
            mask: rv.mask,
            gates: Gates { mvs: gm, ps: gp },
            prior_depth: depth,
            prior_normal: normal,
        }
    }

    fn small_cfg(rays: usize) -> TrainConfig {
        TrainConfig {
            rays_per_view: rays,
            eikonal_samples: 8,
            sample: crate::render::sampling::SampleConfig {
                coarse: 8,
                fine: 8,
                sphere_radius: 1.2,
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn ungated_batch_has_zero_prior_terms() {
        let view = scene_view(false);
        let (pair, set) = micro_pair(1);
        let cfg = small_cfg(40);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let plan = build_epoch_plan(&[view], &pair, &set, &cfg, &mut rng);
        assert_eq!(plan.counts.mvs, 0);
        assert_eq!(plan.counts.ps, 0);
        let v = epoch_loss_value(&pair, &set, &plan, &cfg).unwrap();
        assert_eq!(v.mvs, 0.0);
        assert_eq!(v.ps, 0.0);
        assert!(v.render > 0.0);
        assert!(v.eikonal >= 0.0);
    }

    #[test]
    fn fully_gated_batch_drops_photometric_supervision() {
        let view = scene_view(true);
        // Shrink drawing to the mask so every draw is doubly gated: set the
        // mask as the whole frame is impossible, instead verify via counts
        // that doubly gated draws never enter the photometric block.
        view.validate().unwrap();
        let (pair, set) = micro_pair(1);
        let cfg = small_cfg(60);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let plan = build_epoch_plan(&[view], &pair, &set, &cfg, &mut rng);
        let vp = &plan.views[0];
        // All masked draws are doubly gated, so the photometric block is
        // exactly the outside-silhouette draws that hit the sphere.
        assert_eq!(vp.plan.n_render + vp.plan.n_rays() - vp.plan.n_render,
                   vp.plan.n_rays());
        assert!(vp.outside_rows.iter().all(|&r| r < vp.plan.n_render));
        assert_eq!(plan.counts.mvs, plan.counts.ps);
        let v = epoch_loss_value(&pair, &set, &plan, &cfg).unwrap();
        assert!(v.mvs > 0.0);
        assert!(v.ps > 0.0);
    }

    #[test]
    fn logged_terms_sum_to_total() {
        let view = scene_view(true);
        let (pair, set) = micro_pair(3);
        let cfg = small_cfg(50);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let plan = build_epoch_plan(&[view], &pair, &set, &cfg, &mut rng);
        let v = epoch_loss_value(&pair, &set, &plan, &cfg).unwrap();
        let s = v.mvs + v.ps + v.render + v.mask + v.eikonal;
        assert!((v.total - s).abs() < 1e-12);
        assert!(v.total > 0.0);
    }

    #[test]
    fn ablation_flags_zero_their_terms() {
        let view = scene_view(true);
        let (pair, set) = micro_pair(3);
        let mut cfg = small_cfg(50);
        cfg.ablation = AblationFlags {
            no_mvs: true,
            no_ps: true,
            no_render: true,
            no_uncertainty: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let plan = build_epoch_plan(&[view], &pair, &set, &cfg, &mut rng);
        let v = epoch_loss_value(&pair, &set, &plan, &cfg).unwrap();
        assert_eq!(v.mvs, 0.0);
        assert_eq!(v.ps, 0.0);
        assert_eq!(v.render, 0.0);
        assert!(v.mask + v.eikonal > 0.0);
        assert!((v.total - v.mask - v.eikonal).abs() < 1e-12);
    }

    #[test]
    fn photometric_term_matches_offset_construction() {
        // Targets set to the current rendering plus 0.1 per channel must
        // produce a mean L1 of exactly 0.3 under the summed-channel
        // convention.
        let view = scene_view(false);
        let (pair, set) = micro_pair(5);
        let cfg = small_cfg(30);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut plan = build_epoch_plan(&[view], &pair, &set, &cfg, &mut rng);
        let vp = &mut plan.views[0];
        let raw = render_batch_raw(&set, &pair, &vp.plan);
        let n = vp.plan.n_render;
        vp.targets = Mat::from_fn(n, 3, |i, c| raw.color[i][c] + 0.1);
        vp.render_miss_abs = 0.0;
        plan.counts.render = n;
        let v = epoch_loss_value(&pair, &set, &plan, &cfg).unwrap();
        assert!((v.render - 0.3).abs() < 1e-9, "render term {}", v.render);
    }

    #[test]
    fn empty_cross_entropy_matches_hand_value() {
        let mut tape = Tape::new();
        let o = tape.constant(Mat::from_vec(1, 1, vec![0.5])).unwrap();
        let s = bce_empty_sum(&mut tape, o).unwrap();
        let got = tape.value(s).at(0, 0);
        assert!((got - (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn unit_gradient_penalty_matches_direct_computation() {
        let view = scene_view(false);
        let (pair, set) = micro_pair(4);
        let cfg = small_cfg(12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let plan = build_epoch_plan(&[view], &pair, &set, &cfg, &mut rng);
        let v = epoch_loss_value(&pair, &set, &plan, &cfg).unwrap();

        // Oracle: gradients from the plain evaluation path.
        let mut sum = 0.0;
        let mut count = 0;
        for vp in &plan.views {
            let pts = vp.plan.points();
            let out = pair.sdf.eval_raw(&set, &pts, true, false);
            let g = out.grad.unwrap();
            for i in 0..g.rows() {
                let n2: S = (0..3).map(|c| g.at(i, c) * g.at(i, c)).sum();
                let d = (n2 + 1e-12).sqrt() - 1.0;
                sum += d * d;
                count += 1;
            }
        }
        let out = pair.sdf.eval_raw(&set, &plan.uniform_pts, true, false);
        let g = out.grad.unwrap();
        for i in 0..g.rows() {
            let n2: S = (0..3).map(|c| g.at(i, c) * g.at(i, c)).sum();
            let d = (n2 + 1e-12).sqrt() - 1.0;
            sum += d * d;
            count += 1;
        }
        assert_eq!(count, plan.counts.eikonal);
        let want = cfg.lambda_eikonal * sum / count as S;
        assert!((v.eikonal - want).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences_on_tiny_batch() {
        let view = scene_view(true);
        let (pair, mut set) = micro_pair(6);
        let cfg = small_cfg(8);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let plan = build_epoch_plan(&[view], &pair, &set, &cfg, &mut rng);

        let vals = epoch_gradients(&pair, &mut set, &plan, &cfg).unwrap();
        assert!(vals.total.is_finite());
        let grads: Vec<Mat<S>> = set.entries().iter().map(|e| e.grad.clone()).collect();

        let mut check_rng = ChaCha8Rng::seed_from_u64(77);
        let ids: Vec<_> = set.ids().collect();
        let mut checked = 0;
        let mut attempts = 0;
        while checked < 10 && attempts < 60 {
            attempts += 1;
            use rand::Rng;
            let pi = check_rng.gen_range(0..ids.len());
            let id = ids[pi];
            let len = set.value(id).len();
            let ei = check_rng.gen_range(0..len);
            let analytic = grads[pi].as_slice()[ei];
            if analytic.abs() < 1e-7 {
                continue;
            }
            let fd = crate::autodiff::central_diff_param(&mut set, id, ei, 1e-5, |s| {
                epoch_loss_value(&pair, s, &plan, &cfg).unwrap().total
            });
            let rel = (analytic - fd).abs() / fd.abs().max(1e-9);
            assert!(
                rel < 2e-3,
                "param {pi} elem {ei}: analytic {analytic} fd {fd} rel {rel}"
            );
            checked += 1;
        }
        assert!(checked >= 8, "only {checked} informative parameters found");
    }

    #[test]
    fn one_step_decreases_loss_on_fixed_batch() {
        let view = scene_view(true);
        let cfg = small_cfg(24);
        let mut wins = 0;
        let trials = 20;
        for t in 0..trials {
            let (pair, mut set) = micro_pair(100 + t);
            let mut rng = ChaCha8Rng::seed_from_u64(200 + t);
            let plan = build_epoch_plan(&[view.clone()], &pair, &set, &cfg, &mut rng);
            let before = epoch_gradients(&pair, &mut set, &plan, &cfg).unwrap().total;
            set.adam_step(&AdamConfig {
                lr: 1e-4,
                ..AdamConfig::default()
            });
            let after = epoch_loss_value(&pair, &set, &plan, &cfg).unwrap().total;
            if after < before {
                wins += 1;
            }
        }
        assert!(wins * 100 >= trials * 95, "loss fell in {wins}/{trials} trials");
    }
}
