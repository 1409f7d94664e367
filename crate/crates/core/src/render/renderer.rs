//! Batched volume rendering along planned rays.
//!
//! All rays in a batch share the same sample count, so per-sample network
//! outputs are `[N*S x C]` matrices and per-ray quadrature runs on `[N x S]`
//! reshapes. Rays are ordered so that the leading `n_render` block is the
//! subset whose colors are needed; radiance is only evaluated there.

use crate::autodiff::{NodeId, ParamSet, Tape, TapeBinding, TapeError};
use crate::fields::net::FieldPair;
use crate::mat::Mat;
use crate::render::density::{cdf_raw, density_nodes, density_raw};
use crate::render::sampling::RaySamples;
use crate::scene::camera::Ray;
use crate::S;

/// Probability clamp keeping the mask cross entropy finite.
pub const OPACITY_CLAMP: S = 1e-12;

/// A batch of rays with their quadrature points. `n_render` leading rays get
/// colors; every ray gets opacity, expected normal, and weight diagnostics.
pub struct RenderPlan {
    pub rays: Vec<Ray>,
    pub samples: Vec<RaySamples>,
    pub n_render: usize,
}

impl RenderPlan {
    pub fn new(rays: Vec<Ray>, samples: Vec<RaySamples>, n_render: usize) -> Self {
        assert_eq!(rays.len(), samples.len());
        assert!(n_render <= rays.len());
        let s = samples.first().map(|r| r.t.len()).unwrap_or(0);
        assert!(
            samples.iter().all(|r| r.t.len() == s),
            "all rays in a batch share one sample count"
        );
        Self {
            rays,
            samples,
            n_render,
        }
    }

    pub fn n_rays(&self) -> usize {
        self.rays.len()
    }

    pub fn per_ray(&self) -> usize {
        self.samples.first().map(|r| r.t.len()).unwrap_or(0)
    }

    /// `[N*S x 3]` sample positions, ray major.
    pub fn points(&self) -> Mat<S> {
        let s = self.per_ray();
        let mut pts = Mat::zeros(self.n_rays() * s, 3);
        for (i, (ray, rs)) in self.rays.iter().zip(&self.samples).enumerate() {
            for (j, &t) in rs.t.iter().enumerate() {
                let p = ray.at(t);
                pts.row_mut(i * s + j).copy_from_slice(&[p.x, p.y, p.z]);
            }
        }
        pts
    }

    /// `[N x S]` segment lengths.
    pub fn deltas(&self) -> Mat<S> {
        let s = self.per_ray();
        let mut d = Mat::zeros(self.n_rays(), s);
        for (i, rs) in self.samples.iter().enumerate() {
            d.row_mut(i).copy_from_slice(&rs.deltas());
        }
        d
    }

    /// `[M*S x 3]` unit view directions (from camera toward the scene),
    /// repeated per sample, for the first `m` rays.
    fn dirs_for(&self, m: usize) -> Mat<S> {
        let s = self.per_ray();
        let mut dirs = Mat::zeros(m * s, 3);
        for (i, ray) in self.rays.iter().take(m).enumerate() {
            for j in 0..s {
                dirs.row_mut(i * s + j)
                    .copy_from_slice(&[ray.dir.x, ray.dir.y, ray.dir.z]);
            }
        }
        dirs
    }
}

/// Tape nodes produced by a render pass.
pub struct RenderNodes {
    /// `[n_render x 3]`, present when the plan requests colors.
    pub color: Option<NodeId>,
    /// `[N x 3]` weighted spatial gradients (not normalized).
    pub normal: NodeId,
    /// `[N x 1]` max CDF along each ray, clamped away from 0 and 1.
    pub opacity: NodeId,
    /// `[N x 1]` quadrature weight totals.
    pub weight_sum: NodeId,
    /// `[N x 1]` transmittance after the last segment.
    pub transmittance_end: NodeId,
    /// `[N*S x 3]` spatial gradients at every sample, for the unit-gradient
    /// penalty.
    pub grad_all: NodeId,
    /// `[N*S x 1]` signed distances at every sample.
    pub sdf_all: NodeId,
}

/// Renders a planned batch on the tape.
pub fn render_batch(
    tape: &mut Tape<S>,
    bind: &TapeBinding,
    pair: &FieldPair,
    plan: &RenderPlan,
) -> Result<RenderNodes, TapeError> {
    let n = plan.n_rays();
    let s = plan.per_ray();
    assert!(n > 0 && s > 1, "render batch needs rays and samples");
    let pts = plan.points();

    let sdf_out = pair.sdf.eval_tape(tape, bind, &pts, true)?;
    let grad_all = sdf_out.grad.expect("gradient requested");
    let sdf_mat = tape.reshape(sdf_out.sdf, n, s)?;
    let la = bind.node(pair.log_alpha);
    let lb = bind.node(pair.log_beta);
    let (phi, sigma) = density_nodes(tape, sdf_mat, la, lb)?;

    let deltas = tape.constant(plan.deltas())?;
    let a = tape.mul(sigma, deltas)?;
    let excl = tape.exclusive_cumsum_rows(a)?;
    let neg_excl = tape.neg(excl)?;
    let trans = tape.exp(neg_excl)?;
    let neg_a = tape.neg(a)?;
    let exp_neg_a = tape.exp(neg_a)?;
    let absorb = tape.one_minus(exp_neg_a)?;
    let w = tape.mul(trans, absorb)?;

    let weight_sum = tape.row_sum(w)?;
    let a_total = tape.row_sum(a)?;
    let neg_a_total = tape.neg(a_total)?;
    let transmittance_end = tape.exp(neg_a_total)?;
    let opacity = {
        let m = tape.row_max(phi)?;
        tape.clamp(m, OPACITY_CLAMP, 1.0 - OPACITY_CLAMP)?
    };

    // Expected normal: per-coordinate weighted sum of sample gradients.
    let mut norm_cols = Vec::with_capacity(3);
    for k in 0..3 {
        let gk = tape.slice_cols(grad_all, k, 1)?;
        let gk = tape.reshape(gk, n, s)?;
        let wk = tape.mul(w, gk)?;
        norm_cols.push(tape.row_sum(wk)?);
    }
    let n01 = tape.concat_cols(norm_cols[0], norm_cols[1])?;
    let normal = tape.concat_cols(n01, norm_cols[2])?;

    let color = if plan.n_render > 0 {
        let m = plan.n_render;
        let rows = m * s;
        let grad_r = tape.slice_rows(grad_all, 0, rows)?;
        // Unit-normal input for the radiance net; the epsilon keeps the
        // normalization differentiable at vanishing gradients.
        let norm = {
            let sq = tape.mul(grad_r, grad_r)?;
            let ssum = tape.row_sum(sq)?;
            let eps = tape.add_const(ssum, 1e-12)?;
            tape.sqrt(eps)?
        };
        let inv_norm = tape.recip(norm)?;
        let unit = tape.scale_rows(grad_r, inv_norm)?;
        let feat_r = tape.slice_rows(sdf_out.feat, 0, rows)?;
        let x_sub = Mat::from_fn(rows, 3, |i, c| pts.at(i, c));
        let v_sub = plan.dirs_for(m);
        let rgb = pair
            .radiance
            .eval_tape(tape, bind, &x_sub, unit, &v_sub, feat_r)?;
        let w_r = tape.slice_rows(w, 0, m)?;
        let mut cols = Vec::with_capacity(3);
        for c in 0..3 {
            let ch = tape.slice_cols(rgb, c, 1)?;
            let ch = tape.reshape(ch, m, s)?;
            let wc = tape.mul(w_r, ch)?;
            cols.push(tape.row_sum(wc)?);
        }
        let c01 = tape.concat_cols(cols[0], cols[1])?;
        Some(tape.concat_cols(c01, cols[2])?)
    } else {
        None
    };

    Ok(RenderNodes {
        color,
        normal,
        opacity,
        weight_sum,
        transmittance_end,
        grad_all,
        sdf_all: sdf_out.sdf,
    })
}

/// Raw render results, one entry per ray.
#[derive(Clone, Debug)]
pub struct RawRender {
    pub color: Vec<[S; 3]>,
    pub normal: Vec<[S; 3]>,
    pub opacity: Vec<S>,
    pub weight_sum: Vec<S>,
    pub transmittance_end: Vec<S>,
}

/// Value-only rendering without a tape, chunked to bound memory. Produces
/// colors for the first `n_render` rays and the other outputs for all.
pub fn render_batch_raw(set: &ParamSet<S>, pair: &FieldPair, plan: &RenderPlan) -> RawRender {
    let n = plan.n_rays();
    let s = plan.per_ray();
    let alpha = pair.alpha(set);
    let beta = pair.beta(set);
    let mut out = RawRender {
        color: vec![[0.0; 3]; plan.n_render],
        normal: vec![[0.0; 3]; n],
        opacity: vec![0.0; n],
        weight_sum: vec![0.0; n],
        transmittance_end: vec![0.0; n],
    };

    let chunk_rays = (1 << 16) / s.max(1) + 1;
    let mut start = 0;
    while start < n {
        let end = (start + chunk_rays).min(n);
        let m = end - start;
        let mut pts = Mat::zeros(m * s, 3);
        for i in 0..m {
            let ray = &plan.rays[start + i];
            for (j, &t) in plan.samples[start + i].t.iter().enumerate() {
                let p = ray.at(t);
                pts.row_mut(i * s + j).copy_from_slice(&[p.x, p.y, p.z]);
            }
        }
        let want_color_rows = plan.n_render.saturating_sub(start).min(m);
        let eval = pair
            .sdf
            .eval_raw(set, &pts, true, want_color_rows > 0);
        let grad = eval.grad.as_ref().expect("gradient requested");

        // Radiance for the color rows of this chunk.
        let rgb = if want_color_rows > 0 {
            let rows = want_color_rows * s;
            let sub = |m: &Mat<S>| Mat::from_fn(rows, m.cols(), |i, c| m.at(i, c));
            let mut unit = Mat::zeros(rows, 3);
            for i in 0..rows {
                let g = crate::Vec3::new(grad.at(i, 0), grad.at(i, 1), grad.at(i, 2));
                let nn = (g.norm_sq() + 1e-12).sqrt();
                unit.row_mut(i).copy_from_slice(&[g.x / nn, g.y / nn, g.z / nn]);
            }
            let mut dirs = Mat::zeros(rows, 3);
            for i in 0..want_color_rows {
                let d = plan.rays[start + i].dir;
                for j in 0..s {
                    dirs.row_mut(i * s + j).copy_from_slice(&[d.x, d.y, d.z]);
                }
            }
            let feat = sub(eval.feat.as_ref().expect("features requested"));
            Some(
                pair.radiance
                    .eval_raw(set, &sub(&pts), &unit, &dirs, &feat),
            )
        } else {
            None
        };

        for i in 0..m {
            let rs = &plan.samples[start + i];
            let deltas = rs.deltas();
            let mut acc: S = 0.0;
            let mut wsum = 0.0;
            let mut phimax: S = 0.0;
            let mut nsum = [0.0; 3];
            let mut csum = [0.0; 3];
            for j in 0..s {
                let f = eval.sdf.at(i * s + j, 0);
                let phi = cdf_raw(-f, beta);
                phimax = phimax.max(phi);
                let aj = density_raw(f, alpha, beta) * deltas[j];
                let t_here = (-acc).exp();
                let wj = t_here * (1.0 - (-aj).exp());
                acc += aj;
                wsum += wj;
                for k in 0..3 {
                    nsum[k] += wj * grad.at(i * s + j, k);
                }
                if let Some(rgb) = &rgb {
                    if i < want_color_rows {
                        for k in 0..3 {
                            csum[k] += wj * rgb.at(i * s + j, k);
                        }
                    }
                }
            }
            out.normal[start + i] = nsum;
            out.weight_sum[start + i] = wsum;
            out.transmittance_end[start + i] = (-acc).exp();
            out.opacity[start + i] = phimax.clamp(OPACITY_CLAMP, 1.0 - OPACITY_CLAMP);
            if i < want_color_rows {
                out.color[start + i] = csum;
            }
        }
        start = end;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::config::FieldConfig;
    use crate::render::sampling::{plan_samples, SampleConfig};
    use crate::Vec3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_pair(seed: u64) -> (ParamSet<S>, FieldPair) {
        let cfg = FieldConfig {
            pos_octaves: 2,
            dir_octaves: 1,
            sdf_layers: 2,
            sdf_width: 12,
            feature_dim: 6,
            skip_layer: 0,
            radiance_layers: 1,
            radiance_width: 10,
            ..FieldConfig::default()
        };
        let mut set = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pair = FieldPair::init(cfg, &mut set, &mut rng).unwrap();
        (set, pair)
    }

    fn inward_rays(n: usize, rng: &mut ChaCha8Rng) -> Vec<Ray> {
        (0..n)
            .map(|_| {
                let origin = Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
                .normalized()
                    * 3.0;
                // Aim inside the half-unit ball so every ray crosses the
                // bounding sphere.
                let target = Vec3::new(
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                );
                Ray {
                    origin,
                    dir: (target - origin).normalized(),
                }
            })
            .collect()
    }

    fn make_plan(set: &ParamSet<S>, pair: &FieldPair, n: usize, seed: u64) -> RenderPlan {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rays = inward_rays(n, &mut rng);
        let cfg = SampleConfig {
            coarse: 8,
            fine: 8,
            sphere_radius: 1.2,
        };
        let samples = plan_samples(pair, set, &rays, &cfg, &mut rng);
        let mut live_rays = Vec::new();
        let mut live_samples = Vec::new();
        for (ray, s) in rays.into_iter().zip(samples) {
            if let Some(s) = s {
                live_rays.push(ray);
                live_samples.push(s);
            }
        }
        assert!(!live_rays.is_empty(), "no rays hit the bounding sphere");
        let n_render = live_rays.len();
        RenderPlan::new(live_rays, live_samples, n_render)
    }

    #[test]
    fn tape_and_raw_renders_agree() {
        let (set, pair) = tiny_pair(31);
        let plan = make_plan(&set, &pair, 6, 7);
        let mut tape = Tape::new();
        let bind = set.bind(&mut tape).unwrap();
        let nodes = render_batch(&mut tape, &bind, &pair, &plan).unwrap();
        let raw = render_batch_raw(&set, &pair, &plan);
        let color = tape.value(nodes.color.unwrap());
        let normal = tape.value(nodes.normal);
        let opacity = tape.value(nodes.opacity);
        let wsum = tape.value(nodes.weight_sum);
        let tend = tape.value(nodes.transmittance_end);
        for i in 0..plan.n_rays() {
            for c in 0..3 {
                assert!(
                    (color.at(i, c) - raw.color[i][c]).abs() < 1e-12,
                    "color ray {i} ch {c}"
                );
                assert!((normal.at(i, c) - raw.normal[i][c]).abs() < 1e-12);
            }
            assert!((opacity.at(i, 0) - raw.opacity[i]).abs() < 1e-12);
            assert!((wsum.at(i, 0) - raw.weight_sum[i]).abs() < 1e-12);
            assert!((tend.at(i, 0) - raw.transmittance_end[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_telescope_to_one_minus_end_transmittance() {
        let (set, pair) = tiny_pair(5);
        let plan = make_plan(&set, &pair, 20, 11);
        let raw = render_batch_raw(&set, &pair, &plan);
        for i in 0..plan.n_rays() {
            let lhs = raw.weight_sum[i];
            let rhs = 1.0 - raw.transmittance_end[i];
            assert!((lhs - rhs).abs() < 1e-12, "ray {i}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn color_loss_parameter_gradients_match_finite_differences() {
        let (mut set, pair) = tiny_pair(17);
        let plan = make_plan(&set, &pair, 3, 23);
        let target: Vec<[S; 3]> = (0..plan.n_render).map(|i| [0.3 + 0.1 * i as S; 3]).collect();

        let loss_raw = |set: &ParamSet<S>| -> S {
            let raw = render_batch_raw(set, &pair, &plan);
            let mut acc: S = 0.0;
            for (c, t) in raw.color.iter().zip(&target) {
                for k in 0..3 {
                    acc += (c[k] - t[k]) * (c[k] - t[k]);
                }
            }
            acc
        };

        let mut tape = Tape::new();
        let bind = set.bind(&mut tape).unwrap();
        let nodes = render_batch(&mut tape, &bind, &pair, &plan).unwrap();
        let tnode = tape
            .constant(Mat::from_fn(plan.n_render, 3, |i, c| target[i][c]))
            .unwrap();
        let diff = tape.sub(nodes.color.unwrap(), tnode).unwrap();
        let sq = tape.mul(diff, diff).unwrap();
        let root = tape.sum_all(sq).unwrap();
        tape.backward(root).unwrap();
        set.zero_grads();
        set.accumulate_grads(&tape, &bind);

        use crate::autodiff::central_diff_param;
        let ids: Vec<_> = set.ids().collect();
        let mut checked = 0;
        for id in ids {
            let len = set.value(id).len();
            for &e in &[0usize, len - 1] {
                let ad = set.grad(id).as_slice()[e.min(len - 1)];
                let fd = central_diff_param(&mut set, id, e.min(len - 1), 1e-5, |s| loss_raw(s));
                let tol = 2e-4 * fd.abs().max(1e-2);
                assert!(
                    (ad - fd).abs() < tol,
                    "param {id:?} elem {e}: ad = {ad}, fd = {fd}"
                );
                checked += 1;
            }
        }
        assert!(checked >= 10);
    }

    #[test]
    fn opacity_high_through_center_low_at_edge() {
        let (set, pair) = tiny_pair(41);
        // Fresh geometric init approximates a sphere of radius ~0.75: a ray
        // through the center must be near-opaque, a far-edge ray clearer.
        let center = Ray {
            origin: Vec3::new(3.0, 0.0, 0.0),
            dir: Vec3::new(-1.0, 0.0, 0.0),
        };
        let edge = Ray {
            origin: Vec3::new(3.0, 0.0, 1.15),
            dir: Vec3::new(-1.0, 0.0, 0.0),
        };
        let cfg = SampleConfig {
            coarse: 24,
            fine: 24,
            sphere_radius: 1.2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rays = vec![center, edge];
        let samples: Vec<_> = plan_samples(&pair, &set, &rays, &cfg, &mut rng)
            .into_iter()
            .map(|s| s.unwrap())
            .collect();
        let plan = RenderPlan::new(rays, samples, 0);
        let raw = render_batch_raw(&set, &pair, &plan);
        assert!(raw.opacity[0] > 0.9, "center opacity {}", raw.opacity[0]);
        assert!(
            raw.opacity[1] < raw.opacity[0],
            "edge {} vs center {}",
            raw.opacity[1],
            raw.opacity[0]
        );
    }
}
