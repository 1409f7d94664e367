//! Signed distance to volume density.
//!
//! The occupancy CDF at scale `beta` is
//! `Phi(u) = 0.5 + 0.5 sign(u) (1 - exp(-|u|/beta))`,
//! and density is `sigma(f) = alpha * Phi(-f)`. Both contraction scales are
//! stored as logarithms, so positivity is structural.

use crate::autodiff::{NodeId, Tape, TapeError};
use crate::scalar::{real, Real};
use crate::S;

/// CDF value at `u`, raw arithmetic. At `u = 0` the exponential term
/// vanishes, so the sign convention there does not matter.
pub fn cdf_raw(u: S, beta: S) -> S {
    0.5 + 0.5 * u.signum() * (1.0 - (-u.abs() / beta).exp())
}

/// Density at signed distance `f`, raw arithmetic.
pub fn density_raw(f: S, alpha: S, beta: S) -> S {
    alpha * cdf_raw(-f, beta)
}

/// Tape version over an `[N x M]` matrix of signed distances. Returns
/// `(phi, sigma)`, both `[N x M]`.
pub fn density_nodes<T: Real>(
    tape: &mut Tape<T>,
    sdf: NodeId,
    log_alpha: NodeId,
    log_beta: NodeId,
) -> Result<(NodeId, NodeId), TapeError> {
    let u = tape.neg(sdf)?;
    let s = tape.sign(u)?;
    let au = tape.abs(u)?;
    let beta = tape.exp(log_beta)?;
    let inv_beta = tape.recip(beta)?;
    let scaled = tape.mul_scalar(au, inv_beta)?;
    let neg_scaled = tape.neg(scaled)?;
    let e = tape.exp(neg_scaled)?;
    let om = tape.one_minus(e)?;
    let inner = tape.mul(s, om)?;
    let half = tape.scale(inner, real::<T>(0.5))?;
    let phi = tape.add_const(half, real::<T>(0.5))?;
    let alpha = tape.exp(log_alpha)?;
    let sigma = tape.mul_scalar(phi, alpha)?;
    Ok((phi, sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::mat::Mat;

    #[test]
    fn anchor_values_are_exact() {
        let (alpha, beta) = (7.0, 0.2);
        // On the surface: half the full density.
        assert!((density_raw(0.0, alpha, beta) - 0.5 * alpha).abs() < 1e-12);
        // One half-life inside: three quarters.
        assert!((density_raw(-beta * 2f64.ln(), alpha, beta) - 0.75 * alpha).abs() < 1e-12);
        // One half-life outside: one quarter.
        assert!((density_raw(beta * 2f64.ln(), alpha, beta) - 0.25 * alpha).abs() < 1e-12);
        // Deep outside: vanishes; deep inside: saturates at alpha.
        assert!(density_raw(50.0 * beta, alpha, beta) < 1e-12);
        assert!((density_raw(-50.0 * beta, alpha, beta) - alpha).abs() < 1e-12);
    }

    #[test]
    fn density_decreases_with_distance() {
        let mut last = S::INFINITY;
        for i in -20..=20 {
            let f = i as S * 0.05;
            let d = density_raw(f, 3.0, 0.1);
            assert!(d <= last + 1e-15);
            assert!(d >= 0.0);
            last = d;
        }
    }

    #[test]
    fn tape_matches_raw_and_differentiates_scales() {
        let (alpha, beta) = (2.0f64, 0.15f64);
        let mut tape = Tape::new();
        let fs = [-0.3, -0.05, 0.0, 0.02, 0.4];
        let sdf = tape
            .var(Mat::from_vec(1, 5, fs.to_vec()))
            .unwrap();
        let la = tape.var(Mat::scalar(alpha.ln())).unwrap();
        let lb = tape.var(Mat::scalar(beta.ln())).unwrap();
        let (phi, sigma) = density_nodes(&mut tape, sdf, la, lb).unwrap();
        for (j, f) in fs.into_iter().enumerate() {
            let want = density_raw(f, alpha, beta);
            assert!((tape.value(sigma).at(0, j) - want).abs() < 1e-12);
            assert!((tape.value(phi).at(0, j) - want / alpha).abs() < 1e-12);
        }
        // Gradient of the summed density against central differences in the
        // log-scales.
        let root = tape.sum_all(sigma).unwrap();
        tape.backward(root).unwrap();
        let h = 1e-6;
        let eval = |la: f64, lb: f64| -> f64 {
            fs.iter()
                .map(|&f| density_raw(f, la.exp(), lb.exp()))
                .sum()
        };
        let fd_a = (eval(alpha.ln() + h, beta.ln()) - eval(alpha.ln() - h, beta.ln())) / (2.0 * h);
        let fd_b = (eval(alpha.ln(), beta.ln() + h) - eval(alpha.ln(), beta.ln() - h)) / (2.0 * h);
        let g_a = tape.grad(la).unwrap().item();
        let g_b = tape.grad(lb).unwrap().item();
        assert!((g_a - fd_a).abs() < 1e-6 * fd_a.abs().max(1.0), "{g_a} vs {fd_a}");
        assert!((g_b - fd_b).abs() < 1e-6 * fd_b.abs().max(1.0), "{g_b} vs {fd_b}");
    }
}
