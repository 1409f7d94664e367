//! Photometric stereo normal oracle with ensemble uncertainty.
//!
//! Per pixel: a least-squares Lambertian fit over the usable lights gives a
//! base scaled normal; the fit residual sets the spread of a perturbation
//! ensemble whose renormalized mean and per-channel population variance
//! become the prior and its uncertainty. Pixels where the model fits badly
//! (speculars, shadows, silhouettes) therefore report honest variance.

use crate::error::{Error, Result};
use crate::img::ImageF;
use crate::scene::rig::ViewSetup;
use crate::scene::simulate::RenderedView;
use crate::{Mat3, Vec3, S};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsConfig {
    /// Ensemble members per pixel.
    pub ensemble: usize,
    /// Perturbation scale per unit relative residual.
    pub kappa: S,
    /// Lights below this fraction of the pixel's brightest light are unusable.
    pub min_light_frac: S,
    /// Minimum usable lights for a fit.
    pub min_lights: usize,
    /// Extra relative perturbation added to every member, for robustness
    /// studies.
    pub noise_std: S,
}

impl Default for PsConfig {
    fn default() -> Self {
        Self {
            ensemble: 100,
            kappa: 1.0,
            min_light_frac: 0.01,
            min_lights: 3,
            noise_std: 0.0,
        }
    }
}

/// Variance assigned to pixels whose fit is impossible; far above any gate.
pub const PS_INVALID_VARIANCE: S = 1.0;

/// Mean and per-channel population variance of an ensemble, accumulated in
/// member order.
pub fn ensemble_statistics(members: &[Vec3]) -> (Vec3, Vec3) {
    assert!(!members.is_empty(), "an ensemble needs at least one member");
    let n = members.len() as S;
    let mut mean = Vec3::zero();
    for m in members {
        mean = mean + *m;
    }
    mean = mean / n;
    let mut var = Vec3::zero();
    for m in members {
        let d = *m - mean;
        var = var + d.hadamard(d);
    }
    var = var / n;
    (mean, var)
}

#[derive(Clone, Debug)]
pub struct PsPrior {
    /// World-frame unit normals; 0 outside the mask and at invalid pixels.
    pub normal: ImageF,
    /// Per-channel population variance of the ensemble.
    pub variance: ImageF,
}

/// Rank check of the lighting matrix; rank below 3 cannot constrain a
/// normal anywhere in the view.
fn lighting_rank_ok(setup: &ViewSetup) -> bool {
    let mut acc = [[0.0 as S; 3]; 3];
    for (&l, &e) in setup.light_dirs.iter().zip(&setup.light_intensities) {
        let v = l * e;
        for a in 0..3 {
            for b in 0..3 {
                acc[a][b] += v[a] * v[b];
            }
        }
    }
    Mat3::from_rows(acc[0], acc[1], acc[2]).det().abs() > 1e-12
}

/// Solves the least-squares system for one pixel; `None` when the usable
/// subset is itself degenerate.
fn fit_pixel(
    lights: &[(Vec3, S)],
    b: &[S],
) -> Option<(Vec3, S)> {
    let mut ata = [[0.0 as S; 3]; 3];
    let mut atb = [0.0 as S; 3];
    for ((l, e), &bi) in lights.iter().zip(b) {
        let row = *l * *e;
        for a in 0..3 {
            for c in 0..3 {
                ata[a][c] += row[a] * row[c];
            }
            atb[a] += row[a] * bi;
        }
    }
    let m = Mat3::from_rows(ata[0], ata[1], ata[2]);
    let inv = m.inverse()?;
    let g = inv.mul_vec(Vec3::from_array(atb));
    // Relative residual of the fit.
    let mut rss = 0.0;
    let mut bss = 0.0;
    for ((l, e), &bi) in lights.iter().zip(b) {
        let pred = (*l * *e).dot(g);
        rss += (pred - bi) * (pred - bi);
        bss += bi * bi;
    }
    let r = rss.sqrt() / (bss.sqrt() + 1e-9);
    Some((g, r))
}

/// Runs the oracle on one view. Fails fast when the rig's lighting cannot
/// constrain normals at all.
pub fn ps_prior(
    view: &RenderedView,
    setup: &ViewSetup,
    cfg: &PsConfig,
    seed: u64,
) -> Result<PsPrior> {
    if !lighting_rank_ok(setup) {
        return Err(Error::Degenerate(
            "degenerate lighting: light directions span fewer than 3 dimensions".into(),
        ));
    }
    if view.images.len() != setup.light_dirs.len() {
        return Err(Error::Config(format!(
            "view has {} exposures but the rig lists {} lights",
            view.images.len(),
            setup.light_dirs.len()
        )));
    }
    let (w, h) = (view.mask.width(), view.mask.height());
    let mut normal = ImageF::new(w, h, 3);
    let mut variance = ImageF::new(w, h, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_members = cfg.ensemble.max(1);

    for y in 0..h {
        for x in 0..w {
            if view.mask.at(x, y, 0) < 0.5 {
                continue;
            }
            let lum: Vec<S> = view.images.iter().map(|im| im.luminance(x, y)).collect();
            let peak = lum.iter().cloned().fold(0.0, S::max);
            let mut lights = Vec::new();
            let mut b = Vec::new();
            for (j, &v) in lum.iter().enumerate() {
                if v > cfg.min_light_frac * peak && peak > 0.0 {
                    lights.push((setup.light_dirs[j], setup.light_intensities[j]));
                    b.push(v);
                }
            }
            let fitted = if lights.len() >= cfg.min_lights {
                fit_pixel(&lights, &b)
            } else {
                None
            };
            let Some((g, resid)) = fitted else {
                for c in 0..3 {
                    variance.set(x, y, c, PS_INVALID_VARIANCE);
                }
                continue;
            };
            let g_norm = g.norm();
            if g_norm < 1e-12 {
                for c in 0..3 {
                    variance.set(x, y, c, PS_INVALID_VARIANCE);
                }
                continue;
            }

            // Ensemble of perturbed, renormalized members.
            let sigma = (cfg.kappa * resid + cfg.noise_std) * g_norm;
            let mut members = Vec::with_capacity(n_members);
            for _ in 0..n_members {
                let eta = Vec3::new(
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                );
                members.push((g + eta * sigma).normalized());
            }
            let (mean, var) = ensemble_statistics(&members);

            let unit = mean.normalized();
            for c in 0..3 {
                normal.set(x, y, c, unit[c]);
                variance.set(x, y, c, var[c]);
            }
        }
    }
    Ok(PsPrior { normal, variance })
}
