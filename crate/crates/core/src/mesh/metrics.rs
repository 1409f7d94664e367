//! Point set comparison: chamfer distance and distance-thresholded F-score.
//!
//! Nearest neighbours are found through a uniform hash grid with expanding
//! shell search. The grid returns exact minima, so the accelerated path and
//! the quadratic reference path compute identical values.

use crate::error::{Error, Result};
use crate::{Vec3, S};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Comparison summary between a reconstructed set `a` and a reference set `b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub chamfer_l2: S,
    pub fscore: S,
    pub precision: S,
    pub recall: S,
    pub tau: S,
    pub n_a: usize,
    pub n_b: usize,
}

fn dist_sq(a: Vec3, b: Vec3) -> S {
    let d = a - b;
    d.dot(d)
}

/// Hash grid over a fixed point set answering exact nearest neighbour
/// queries. Cells are cubes of side `cell`; a query expands Chebyshev
/// shells, clamped to the occupied-cell bounding box, until the best
/// squared distance beats the shell lower bound.
struct GridIndex<'a> {
    points: &'a [Vec3],
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
    origin: Vec3,
    cell: S,
    key_lo: (i64, i64, i64),
    key_hi: (i64, i64, i64),
}

impl<'a> GridIndex<'a> {
    fn build(points: &'a [Vec3]) -> Self {
        let mut lo = points[0];
        let mut hi = points[0];
        for &p in points {
            lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
            hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
        }
        let diag = (hi - lo).norm();
        // Target a handful of points per cell; degenerate spreads fall back
        // to one cell holding everything, which stays exact.
        let cell = (diag / (points.len() as S).cbrt()).max(1e-9);
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        let mut key_lo = (i64::MAX, i64::MAX, i64::MAX);
        let mut key_hi = (i64::MIN, i64::MIN, i64::MIN);
        for (i, &p) in points.iter().enumerate() {
            let k = Self::key(p, lo, cell);
            key_lo = (key_lo.0.min(k.0), key_lo.1.min(k.1), key_lo.2.min(k.2));
            key_hi = (key_hi.0.max(k.0), key_hi.1.max(k.1), key_hi.2.max(k.2));
            cells.entry(k).or_default().push(i);
        }
        Self {
            points,
            cells,
            origin: lo,
            cell,
            key_lo,
            key_hi,
        }
    }

    fn key(p: Vec3, origin: Vec3, cell: S) -> (i64, i64, i64) {
        (
            ((p.x - origin.x) / cell).floor() as i64,
            ((p.y - origin.y) / cell).floor() as i64,
            ((p.z - origin.z) / cell).floor() as i64,
        )
    }

    /// Exact squared distance to the nearest stored point.
    fn nearest_sq(&self, q: Vec3) -> S {
        let (cx, cy, cz) = Self::key(q, self.origin, self.cell);
        let near = |c: i64, l: i64, h: i64| (l - c).max(c - h).max(0);
        let far = |c: i64, l: i64, h: i64| (c - l).abs().max((c - h).abs());
        let (lo, hi) = (self.key_lo, self.key_hi);
        let start = near(cx, lo.0, hi.0)
            .max(near(cy, lo.1, hi.1))
            .max(near(cz, lo.2, hi.2));
        let last = far(cx, lo.0, hi.0)
            .max(far(cy, lo.1, hi.1))
            .max(far(cz, lo.2, hi.2));
        let mut best = S::INFINITY;
        for shell in start..=last {
            // Any point in shell r lies at distance >= (r - 1) * cell from
            // anywhere in the query's own cell.
            if best.is_finite() {
                let bound = (shell - 1).max(0) as S * self.cell;
                if bound * bound > best {
                    break;
                }
            }
            for x in (cx - shell).max(lo.0)..=(cx + shell).min(hi.0) {
                for y in (cy - shell).max(lo.1)..=(cy + shell).min(hi.1) {
                    for z in (cz - shell).max(lo.2)..=(cz + shell).min(hi.2) {
                        let cheb = (x - cx).abs().max((y - cy).abs()).max((z - cz).abs());
                        if cheb != shell {
                            continue;
                        }
                        if let Some(ids) = self.cells.get(&(x, y, z)) {
                            for &i in ids {
                                let d = dist_sq(q, self.points[i]);
                                if d < best {
                                    best = d;
                                }
                            }
                        }
                    }
                }
            }
        }
        best
    }
}

fn require_nonempty(a: &[Vec3], b: &[Vec3]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Degenerate(
            "point set comparison requires two non-empty sets".into(),
        ));
    }
    Ok(())
}

/// Mean squared nearest neighbour distance from each point of `from` into
/// `index`, in iteration order of `from`.
fn directed_mean_sq(from: &[Vec3], index: &GridIndex) -> S {
    let sum: S = from.iter().map(|&p| index.nearest_sq(p)).sum();
    sum / from.len() as S
}

/// Symmetric chamfer distance: the sum of both directional means of
/// squared nearest neighbour distances.
pub fn chamfer_l2(a: &[Vec3], b: &[Vec3]) -> Result<S> {
    require_nonempty(a, b)?;
    let ia = GridIndex::build(a);
    let ib = GridIndex::build(b);
    Ok(directed_mean_sq(a, &ib) + directed_mean_sq(b, &ia))
}

/// Quadratic reference for [`chamfer_l2`]; identical arithmetic without the
/// spatial index.
pub fn chamfer_l2_brute(a: &[Vec3], b: &[Vec3]) -> Result<S> {
    require_nonempty(a, b)?;
    let directed = |from: &[Vec3], to: &[Vec3]| -> S {
        let sum: S = from
            .iter()
            .map(|&p| {
                to.iter()
                    .map(|&q| dist_sq(p, q))
                    .fold(S::INFINITY, S::min)
            })
            .sum();
        sum / from.len() as S
    };
    Ok(directed(a, b) + directed(b, a))
}

/// Fraction of `from` points whose nearest neighbour in `index` lies
/// strictly closer than `tau`.
fn fraction_within(from: &[Vec3], index: &GridIndex, tau: S) -> S {
    let hits = from
        .iter()
        .filter(|&&p| index.nearest_sq(p) < tau * tau)
        .count();
    hits as S / from.len() as S
}

/// Precision, recall and F-score at distance threshold `tau`. A point
/// counts as matched when its nearest neighbour is strictly closer than
/// `tau`. Both fractions zero give an F-score of zero.
pub fn fscore(a: &[Vec3], b: &[Vec3], tau: S) -> Result<(S, S, S)> {
    require_nonempty(a, b)?;
    if tau <= 0.0 {
        return Err(Error::Config(format!(
            "distance threshold must be positive, got {tau}"
        )));
    }
    let ia = GridIndex::build(a);
    let ib = GridIndex::build(b);
    let precision = fraction_within(a, &ib, tau);
    let recall = fraction_within(b, &ia, tau);
    let f = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok((f, precision, recall))
}

/// Quadratic reference for [`fscore`].
pub fn fscore_brute(a: &[Vec3], b: &[Vec3], tau: S) -> Result<(S, S, S)> {
    require_nonempty(a, b)?;
    if tau <= 0.0 {
        return Err(Error::Config(format!(
            "distance threshold must be positive, got {tau}"
        )));
    }
    let frac = |from: &[Vec3], to: &[Vec3]| -> S {
        let hits = from
            .iter()
            .filter(|&&p| {
                to.iter()
                    .map(|&q| dist_sq(p, q))
                    .fold(S::INFINITY, S::min)
                    < tau * tau
            })
            .count();
        hits as S / from.len() as S
    };
    let precision = frac(a, b);
    let recall = frac(b, a);
    let f = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok((f, precision, recall))
}

/// One percent of the diameter of the joint bounding box, the default
/// F-score threshold.
pub fn default_tau(a: &[Vec3], b: &[Vec3]) -> Result<S> {
    require_nonempty(a, b)?;
    let mut lo = a[0];
    let mut hi = a[0];
    for &p in a.iter().chain(b.iter()) {
        lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
        hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
    }
    let diam = (hi - lo).norm();
    if diam <= 0.0 {
        return Err(Error::Degenerate(
            "point sets have zero spatial extent".into(),
        ));
    }
    Ok(0.01 * diam)
}

/// Full comparison at the given threshold.
pub fn evaluate_point_sets(a: &[Vec3], b: &[Vec3], tau: S) -> Result<EvalReport> {
    let chamfer = chamfer_l2(a, b)?;
    let (f, precision, recall) = fscore(a, b, tau)?;
    Ok(EvalReport {
        chamfer_l2: chamfer,
        fscore: f,
        precision,
        recall,
        tau,
        n_a: a.len(),
        n_b: b.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64, scale: S) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-scale..scale),
                    rng.gen_range(-scale..scale),
                    rng.gen_range(-scale..scale),
                )
            })
            .collect()
    }

    #[test]
    fn chamfer_of_unit_offset_singletons_is_two() {
        let a = vec![Vec3::zero()];
        let b = vec![Vec3::new(1.0, 0.0, 0.0)];
        assert_eq!(chamfer_l2(&a, &b).unwrap(), 2.0);
    }

    #[test]
    fn grid_path_matches_brute_force_exactly() {
        let a = random_cloud(200, 11, 1.0);
        let b = random_cloud(180, 12, 1.1);
        let fast = chamfer_l2(&a, &b).unwrap();
        let slow = chamfer_l2_brute(&a, &b).unwrap();
        assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
        let tau = default_tau(&a, &b).unwrap() * 20.0;
        let (f1, p1, r1) = fscore(&a, &b, tau).unwrap();
        let (f2, p2, r2) = fscore_brute(&a, &b, tau).unwrap();
        assert_eq!((f1, p1, r1), (f2, p2, r2));
    }

    #[test]
    fn identical_sets_score_perfectly() {
        let a = random_cloud(300, 5, 1.0);
        let report = evaluate_point_sets(&a, &a, 1e-6).unwrap();
        assert_eq!(report.chamfer_l2, 0.0);
        assert!((report.fscore - 1.0).abs() < 1e-12);
        assert!((report.precision - 1.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_is_an_open_bound() {
        let a = vec![Vec3::zero()];
        let b = vec![Vec3::new(0.5, 0.0, 0.0)];
        // Distance equals tau: strictly-within fails.
        let (f, p, r) = fscore(&a, &b, 0.5).unwrap();
        assert_eq!((f, p, r), (0.0, 0.0, 0.0));
        let (f, p, _) = fscore(&a, &b, 0.5 + 1e-9).unwrap();
        assert_eq!(p, 1.0);
        assert_eq!(f, 1.0);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let a = vec![Vec3::zero()];
        assert!(chamfer_l2(&a, &[]).is_err());
        assert!(chamfer_l2(&[], &a).is_err());
        assert!(fscore(&a, &a, 0.0).is_err());
        assert!(fscore(&a, &a, -1.0).is_err());
        assert!(default_tau(&a, &a).is_err());
    }

    #[test]
    fn far_apart_clusters_resolve_through_shell_search() {
        // Clusters separated by many empty grid cells exercise the shell
        // expansion and its termination bound.
        let mut a = random_cloud(50, 21, 0.1);
        a.push(Vec3::new(40.0, 0.0, 0.0));
        let b = random_cloud(60, 22, 0.1);
        let fast = chamfer_l2(&a, &b).unwrap();
        let slow = chamfer_l2_brute(&a, &b).unwrap();
        assert!((fast - slow).abs() < 1e-9 * slow.max(1.0), "{fast} vs {slow}");
    }
}
