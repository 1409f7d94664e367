//! Fourier feature encoding of 3-vectors.
//!
//! Layout per input row `(x, y, z)`:
//! `[x, y, z, sin(2^0 pi x), sin(2^0 pi y), sin(2^0 pi z), cos(2^0 pi x), ...,
//! cos(2^(k-1) pi z)]`, i.e. the raw coordinates first, then one sin triple
//! and one cos triple per octave. Zero octaves passes the input through.

use crate::mat::Mat;
use crate::scalar::{real, Real};

/// Encoded dimension of a 3-vector at the given octave count.
pub fn encoded_dim(octaves: usize) -> usize {
    3 + 6 * octaves
}

/// Encodes `[N x 3]` points into `[N x encoded_dim]`.
pub fn encode<T: Real>(pts: &Mat<T>, octaves: usize) -> Mat<T> {
    encode_impl(pts, octaves, false).0
}

/// Encodes points and returns the Jacobian split by input coordinate:
/// `jac[k][(i, c)] = d enc[i][c] / d pts[i][k]`.
pub fn encode_with_jacobian<T: Real>(pts: &Mat<T>, octaves: usize) -> (Mat<T>, [Mat<T>; 3]) {
    let (enc, jac) = encode_impl(pts, octaves, true);
    (enc, jac.expect("jacobian requested"))
}

fn encode_impl<T: Real>(
    pts: &Mat<T>,
    octaves: usize,
    with_jac: bool,
) -> (Mat<T>, Option<[Mat<T>; 3]>) {
    assert_eq!(pts.cols(), 3, "encode expects [N x 3] input");
    let n = pts.rows();
    let dim = encoded_dim(octaves);
    let mut enc = Mat::zeros(n, dim);
    let mut jac = if with_jac {
        Some([
            Mat::zeros(n, dim),
            Mat::zeros(n, dim),
            Mat::zeros(n, dim),
        ])
    } else {
        None
    };
    let pi = real::<T>(std::f64::consts::PI);
    for i in 0..n {
        let p = pts.row(i);
        let row = enc.row_mut(i);
        row[..3].copy_from_slice(p);
        for k in 0..octaves {
            let a = real::<T>((1u64 << k) as f64) * pi;
            let base = 3 + 6 * k;
            for c in 0..3 {
                let u = a * p[c];
                row[base + c] = u.sin();
                row[base + 3 + c] = u.cos();
            }
        }
        if let Some(j) = jac.as_mut() {
            for (c, jc) in j.iter_mut().enumerate() {
                let row = jc.row_mut(i);
                row[c] = T::one();
                for k in 0..octaves {
                    let a = real::<T>((1u64 << k) as f64) * pi;
                    let u = a * p[c];
                    let base = 3 + 6 * k;
                    row[base + c] = a * u.cos();
                    row[base + 3 + c] = -a * u.sin();
                }
            }
        }
    }
    (enc, jac)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_formula() {
        assert_eq!(encoded_dim(0), 3);
        assert_eq!(encoded_dim(4), 27);
        assert_eq!(encoded_dim(6), 39);
    }

    #[test]
    fn zero_octaves_is_identity() {
        let pts = Mat::from_vec(2, 3, vec![0.1f64, -0.2, 0.3, 1.0, 2.0, -3.0]);
        let enc = encode(&pts, 0);
        assert_eq!(enc, pts);
    }

    #[test]
    fn first_octave_values_match_hand_computation() {
        let pts = Mat::from_vec(1, 3, vec![0.25f64, 0.5, -1.0]);
        let enc = encode(&pts, 1);
        let pi = std::f64::consts::PI;
        assert_eq!(enc.cols(), 9);
        assert!((enc.at(0, 3) - (pi * 0.25).sin()).abs() < 1e-15);
        assert!((enc.at(0, 4) - (pi * 0.5).sin()).abs() < 1e-15);
        assert!((enc.at(0, 6) - (pi * 0.25).cos()).abs() < 1e-15);
        assert!((enc.at(0, 8) - (pi * -1.0).cos()).abs() < 1e-15);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let pts = Mat::from_vec(2, 3, vec![0.17f64, -0.42, 0.81, -0.3, 0.6, 0.05]);
        let (_, jac) = encode_with_jacobian(&pts, 3);
        let h = 1e-6;
        for i in 0..2 {
            for k in 0..3 {
                let mut plus = pts.clone();
                *plus.at_mut(i, k) += h;
                let mut minus = pts.clone();
                *minus.at_mut(i, k) -= h;
                let ep = encode(&plus, 3);
                let em = encode(&minus, 3);
                for c in 0..encoded_dim(3) {
                    let fd = (ep.at(i, c) - em.at(i, c)) / (2.0 * h);
                    let ad = jac[k].at(i, c);
                    assert!(
                        (fd - ad).abs() < 1e-6 * fd.abs().max(1.0),
                        "row {i} coord {k} col {c}: fd={fd} ad={ad}"
                    );
                }
            }
        }
    }
}
