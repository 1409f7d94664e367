//! Multi-view stereo depth oracle.
//!
//! Instead of running real plane-sweep matching, the oracle models its
//! outcome statistically: per-pixel distinguishability (texture strength
//! shrunk for view-dependent materials) controls both how sharply the cost
//! curve peaks, which sets the softmax confidence, and how far the recovered
//! depth drifts from the truth. Texture-poor or glossy pixels thus come back
//! with low confidence and corrupted depth, exactly the regime the gating
//! has to catch.

use crate::img::ImageF;
use crate::scene::simulate::RenderedView;
use crate::S;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MvsConfig {
    /// Depth hypotheses per pixel; odd so one sits at the cost center.
    pub hypothesis_count: usize,
    /// Full spacing between the outermost hypothesis pair, scene units.
    pub spacing: S,
    /// Cost sharpness multiplier feeding the softmax.
    pub gamma: S,
    /// Depth corruption magnitude at zero distinguishability.
    pub err_scale: S,
    /// Square window side for local texture statistics.
    pub window: usize,
    /// Luminance standard deviation treated as full texture.
    pub texture_ref_std: S,
    /// Distinguishability floor for textureless diffuse pixels.
    pub texture_floor: S,
    /// Multiplier applied for view-dependent materials.
    pub glossy_material_factor: S,
    /// Additional absolute depth noise, for robustness studies.
    pub depth_noise_std: S,
}

impl Default for MvsConfig {
    fn default() -> Self {
        Self {
            hypothesis_count: 5,
            spacing: 0.1,
            gamma: 18.0,
            err_scale: 0.06,
            window: 5,
            texture_ref_std: 0.02,
            texture_floor: 0.15,
            glossy_material_factor: 0.08,
            depth_noise_std: 0.0,
        }
    }
}

/// Candidate depths with matching costs (higher cost = better match).
#[derive(Clone, Debug, PartialEq)]
pub struct DepthHypotheses {
    pub depths: Vec<S>,
    pub costs: Vec<S>,
}

/// Softmax-blends hypotheses into a depth estimate and takes the winning
/// hypothesis probability as the confidence.
pub fn blend_hypotheses(h: &DepthHypotheses) -> (S, S) {
    assert_eq!(h.depths.len(), h.costs.len());
    assert!(!h.depths.is_empty());
    let max_c = h.costs.iter().cloned().fold(S::NEG_INFINITY, S::max);
    let exps: Vec<S> = h.costs.iter().map(|&c| (c - max_c).exp()).collect();
    let z: S = exps.iter().sum();
    let depth = h
        .depths
        .iter()
        .zip(&exps)
        .map(|(&d, &e)| d * e / z)
        .sum();
    let conf = exps.iter().cloned().fold(0.0, S::max) / z;
    (depth, conf)
}

/// Per-view oracle output.
#[derive(Clone, Debug)]
pub struct MvsPrior {
    /// Blended depth; 0 outside the mask.
    pub depth: ImageF,
    /// Winning-hypothesis probability; 0 outside the mask.
    pub confidence: ImageF,
    /// Diagnostic: the distinguishability field the oracle used.
    pub distinguishability: ImageF,
}

/// Population standard deviation of the median-image luminance in a window,
/// over in-mask pixels only.
fn local_texture_std(median: &ImageF, mask: &ImageF, x: usize, y: usize, window: usize) -> S {
    let r = window / 2;
    let (w, h) = (median.width(), median.height());
    let x0 = x.saturating_sub(r);
    let y0 = y.saturating_sub(r);
    let x1 = (x + r + 1).min(w);
    let y1 = (y + r + 1).min(h);
    let mut vals = Vec::with_capacity(window * window);
    for yy in y0..y1 {
        for xx in x0..x1 {
            if mask.at(xx, yy, 0) > 0.5 {
                vals.push(median.luminance(xx, yy));
            }
        }
    }
    if vals.len() < 4 {
        return 0.0;
    }
    let n = vals.len() as S;
    let mean: S = vals.iter().sum::<S>() / n;
    let var: S = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<S>() / n;
    var.sqrt()
}

/// Runs the oracle on one rendered view. `glossy` marks view-dependent
/// materials; `seed` fixes the corruption noise.
pub fn mvs_prior(view: &RenderedView, glossy: bool, cfg: &MvsConfig, seed: u64) -> MvsPrior {
    assert!(cfg.hypothesis_count >= 3 && cfg.hypothesis_count % 2 == 1);
    let (w, h) = (view.mask.width(), view.mask.height());
    let mut depth = ImageF::new(w, h, 1);
    let mut confidence = ImageF::new(w, h, 1);
    let mut disting = ImageF::new(w, h, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extra = (cfg.depth_noise_std > 0.0)
        .then(|| Normal::new(0.0, cfg.depth_noise_std).expect("valid noise std"));
    let material_factor = if glossy { cfg.glossy_material_factor } else { 1.0 };
    let half = (cfg.hypothesis_count / 2) as i64;

    for y in 0..h {
        for x in 0..w {
            if view.mask.at(x, y, 0) < 0.5 {
                continue;
            }
            let tex = local_texture_std(&view.median, &view.mask, x, y, cfg.window);
            let tf = (tex / cfg.texture_ref_std).clamp(cfg.texture_floor, 1.0);
            let s = material_factor * tf;
            disting.set(x, y, 0, s);

            // Matching drifts more where the signal is weaker.
            let eta: S = StandardNormal.sample(&mut rng);
            let mut center = view.depth.at(x, y, 0) + (1.0 - s) * cfg.err_scale * eta;
            if let Some(extra) = extra {
                center += extra.sample(&mut rng);
            }

            let step = 0.5 * cfg.spacing;
            let hyp = DepthHypotheses {
                depths: (-half..=half).map(|j| center + j as S * step).collect(),
                costs: (-half..=half)
                    .map(|j| {
                        let off = j as S * step / cfg.spacing;
                        cfg.gamma * s * (-(off * off))
                    })
                    .collect(),
            };
            let (d, c) = blend_hypotheses(&hyp);
            depth.set(x, y, 0, d);
            confidence.set(x, y, 0, c);
        }
    }
    MvsPrior {
        depth,
        confidence,
        distinguishability: disting,
    }
}
