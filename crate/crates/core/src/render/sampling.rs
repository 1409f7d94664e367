//! Quadrature point placement along rays: stratified coverage of the
//! bounding-sphere span, refined by importance resampling under the current
//! density. Resampling runs on plain values, so the sample positions carry
//! no derivative information.

use crate::autodiff::ParamSet;
use crate::fields::net::FieldPair;
use crate::mat::Mat;
use crate::render::density::density_raw;
use crate::scene::camera::{intersect_sphere, Ray};
use crate::S;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    /// Stratified samples per ray.
    pub coarse: usize,
    /// Importance samples per ray added after the value-only pass.
    pub fine: usize,
    /// Radius of the origin-centered sphere rays are clipped to.
    pub sphere_radius: S,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            coarse: 32,
            fine: 32,
            sphere_radius: 1.2,
        }
    }
}

impl SampleConfig {
    pub fn per_ray(&self) -> usize {
        self.coarse + self.fine
    }
}

/// Sorted quadrature points for one ray; the final segment ends at `t_far`.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySamples {
    pub t: Vec<S>,
    pub t_far: S,
}

impl RaySamples {
    /// Segment lengths: `t[j+1] - t[j]`, closed by `t_far - t[last]`.
    pub fn deltas(&self) -> Vec<S> {
        let mut d = Vec::with_capacity(self.t.len());
        for j in 0..self.t.len() - 1 {
            d.push(self.t[j + 1] - self.t[j]);
        }
        d.push(self.t_far - *self.t.last().expect("non-empty samples"));
        d
    }
}

/// One uniform draw inside each of `n` equal strata of `[t0, t1]`.
pub fn stratified(rng: &mut impl Rng, t0: S, t1: S, n: usize) -> Vec<S> {
    assert!(n > 0 && t1 > t0, "degenerate stratification span");
    let step = (t1 - t0) / n as S;
    (0..n)
        .map(|k| t0 + step * (k as S + rng.gen_range(0.0..1.0)))
        .collect()
}

/// Stratified inverse-CDF draws from the piecewise-constant distribution
/// over the segments of `ts`, with probability proportional to `weights`
/// blended with a uniform floor so empty regions stay reachable.
pub fn importance_fine(
    rng: &mut impl Rng,
    samples: &RaySamples,
    weights: &[S],
    n_fine: usize,
) -> Vec<S> {
    let ts = &samples.t;
    assert_eq!(ts.len(), weights.len());
    let deltas = samples.deltas();
    let total: S = weights.iter().sum();
    let uniform_share = 0.05;
    let n_seg = ts.len();
    let mut cum = Vec::with_capacity(n_seg + 1);
    cum.push(0.0);
    let mut acc: S = 0.0;
    for (j, &w) in weights.iter().enumerate() {
        let pw = if total > 1e-12 { w / total } else { 0.0 };
        // Spread the floor mass by segment length for even coverage.
        let pu = deltas[j] / (samples.t_far - ts[0]).max(1e-12);
        acc += (1.0 - uniform_share) * pw + uniform_share * pu;
        cum.push(acc);
    }
    let norm = acc.max(1e-12);
    for c in cum.iter_mut() {
        *c /= norm;
    }

    let mut out = Vec::with_capacity(n_fine);
    for k in 0..n_fine {
        let u = (k as S + rng.gen_range(0.0..1.0)) / n_fine as S;
        // Last cum entry is 1, so partition_point stays in range.
        let j = cum.partition_point(|&c| c <= u).min(n_seg) - 1;
        let seg_mass = (cum[j + 1] - cum[j]).max(1e-15);
        let frac = (u - cum[j]) / seg_mass;
        out.push(ts[j] + deltas[j] * frac.clamp(0.0, 1.0));
    }
    out
}

fn merge_sorted(a: &[S], b: &[S]) -> Vec<S> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Plans quadrature points for a batch of rays. Rays missing the bounding
/// sphere get `None`. The fine pass evaluates the current field once per
/// coarse sample, batched over all rays.
pub fn plan_samples(
    pair: &FieldPair,
    set: &ParamSet<S>,
    rays: &[Ray],
    cfg: &SampleConfig,
    rng: &mut impl Rng,
) -> Vec<Option<RaySamples>> {
    let spans: Vec<Option<(S, S)>> = rays
        .iter()
        .map(|r| intersect_sphere(r, cfg.sphere_radius))
        .collect();
    let mut coarse: Vec<Option<RaySamples>> = Vec::with_capacity(rays.len());
    for span in &spans {
        coarse.push(span.map(|(t0, t1)| RaySamples {
            t: stratified(rng, t0, t1, cfg.coarse),
            t_far: t1,
        }));
    }
    if cfg.fine == 0 {
        return coarse;
    }

    // Value-only density pass over every live ray's coarse samples.
    let live: Vec<usize> = (0..rays.len()).filter(|&i| coarse[i].is_some()).collect();
    if live.is_empty() {
        return coarse;
    }
    let mut pts = Mat::zeros(live.len() * cfg.coarse, 3);
    for (row_block, &i) in live.iter().enumerate() {
        let cs = coarse[i].as_ref().unwrap();
        for (j, &t) in cs.t.iter().enumerate() {
            let p = rays[i].at(t);
            let row = pts.row_mut(row_block * cfg.coarse + j);
            row.copy_from_slice(&[p.x, p.y, p.z]);
        }
    }
    let sdf = pair.sdf.eval_raw(set, &pts, false, false).sdf;
    let alpha = pair.alpha(set);
    let beta = pair.beta(set);

    for (row_block, &i) in live.iter().enumerate() {
        let cs = coarse[i].as_mut().unwrap();
        let deltas = cs.deltas();
        // Quadrature weights T (1 - exp(-sigma delta)) under the current
        // field guide where the fine samples land.
        let mut acc: S = 0.0;
        let mut weights = Vec::with_capacity(cfg.coarse);
        for j in 0..cfg.coarse {
            let f = sdf.at(row_block * cfg.coarse + j, 0);
            let a = density_raw(f, alpha, beta) * deltas[j];
            let t_here = (-acc).exp();
            weights.push(t_here * (1.0 - (-a).exp()));
            acc += a;
        }
        let fine = importance_fine(rng, cs, &weights, cfg.fine);
        let mut fine_sorted = fine;
        fine_sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite sample positions"));
        cs.t = merge_sorted(&cs.t, &fine_sorted);
    }
    coarse
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stratified_covers_each_stratum_in_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ts = stratified(&mut rng, 2.0, 4.0, 8);
        assert_eq!(ts.len(), 8);
        for (k, &t) in ts.iter().enumerate() {
            let lo = 2.0 + 0.25 * k as S;
            assert!(t >= lo && t < lo + 0.25, "sample {k} = {t}");
        }
        assert!(ts.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn importance_concentrates_on_heavy_segment() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples = RaySamples {
            t: (0..10).map(|k| k as S * 0.1).collect(),
            t_far: 1.0,
        };
        let mut weights = vec![0.0; 10];
        weights[6] = 1.0;
        let fine = importance_fine(&mut rng, &samples, &weights, 200);
        let in_heavy = fine.iter().filter(|&&t| (0.6..0.7).contains(&t)).count();
        assert!(in_heavy > 150, "only {in_heavy} of 200 in the heavy segment");
        assert!(fine.iter().all(|&t| (0.0..=1.0).contains(&t)));
    }

    #[test]
    fn importance_handles_all_zero_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples = RaySamples {
            t: (0..5).map(|k| k as S).collect(),
            t_far: 5.0,
        };
        let fine = importance_fine(&mut rng, &samples, &[0.0; 5], 50);
        assert_eq!(fine.len(), 50);
        assert!(fine.iter().all(|&t| (0.0..=5.0).contains(&t)));
        // Roughly uniform: every unit segment gets something.
        for seg in 0..5 {
            let lo = seg as S;
            assert!(fine.iter().any(|&t| t >= lo && t < lo + 1.0), "segment {seg} empty");
        }
    }

    #[test]
    fn deltas_close_the_span() {
        let s = RaySamples {
            t: vec![1.0, 1.5, 2.5],
            t_far: 4.0,
        };
        assert_eq!(s.deltas(), vec![0.5, 1.0, 1.5]);
        let sum: S = s.deltas().iter().sum();
        assert!((sum - 3.0).abs() < 1e-15);
    }

    #[test]
    fn merge_keeps_global_order() {
        let m = merge_sorted(&[0.1, 0.4, 0.9], &[0.2, 0.3, 1.5]);
        assert_eq!(m, vec![0.1, 0.2, 0.3, 0.4, 0.9, 1.5]);
    }
}
