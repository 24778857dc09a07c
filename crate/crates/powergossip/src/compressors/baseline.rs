//! Baseline quantizers for the public-copy gossip protocol.
//!
//! These compress a single matrix (not a pairwise difference) and are biased,
//! which is why the protocol that uses them needs memory and a step size.
//! Payload sizes follow the usual wire encoding: one sign bit per entry plus
//! one float for the shared magnitude, or value/index pairs for sparse
//! selections, or the two factor vectors for the rank-1 variant.

use crate::error::{Error, Result};
use crate::numerics::{top_right_singular_vector, Matrix};

#[derive(Clone, Debug, PartialEq)]
pub enum BaselineCompressor {
    /// `sign(x) * mean(|x|)`: one shared magnitude, one sign bit per entry.
    SignNorm,
    /// Keeps the `ceil(fraction * len)` largest-magnitude entries, sent as
    /// float values with 64-bit indices.
    TopFraction { fraction: f64 },
    /// Best rank-1 approximation `(X v) v'` with `v` the top right singular
    /// vector; sends the two factor vectors.
    SvdRank1,
}

/// Wire size of a compressed payload, split into float counts (scaled by the
/// configured float width) and raw bits (signs, indices) that do not scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselinePayload {
    pub floats: usize,
    pub raw_bits: u64,
}

/// Compresses `x`, returning the decompressed matrix as the receiver would
/// reconstruct it together with the payload size.
pub fn baseline_compress(
    compressor: &BaselineCompressor,
    x: &Matrix,
) -> Result<(Matrix, BaselinePayload)> {
    let (rows, cols) = x.shape();
    let len = rows * cols;
    if len == 0 {
        return Err(Error::invalid("cannot compress an empty matrix"));
    }
    match compressor {
        BaselineCompressor::SignNorm => {
            let scale = x.data().iter().map(|v| v.abs()).sum::<f64>() / len as f64;
            let data = x
                .data()
                .iter()
                .map(|&v| if v >= 0.0 { scale } else { -scale })
                .collect();
            Ok((
                Matrix::new(rows, cols, data)?,
                BaselinePayload {
                    floats: 1,
                    raw_bits: len as u64,
                },
            ))
        }
        BaselineCompressor::TopFraction { fraction } => {
            if !(*fraction > 0.0 && *fraction <= 1.0) {
                return Err(Error::invalid(format!(
                    "top fraction must lie in (0, 1], got {fraction}"
                )));
            }
            let kept = (fraction * len as f64).ceil() as usize;
            let kept = kept.clamp(1, len);
            let mut order: Vec<usize> = (0..len).collect();
            // Largest magnitude first; ties resolved by index so the
            // selection is deterministic.
            order.sort_by(|&a, &b| {
                x.data()[b]
                    .abs()
                    .partial_cmp(&x.data()[a].abs())
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let mut data = vec![0.0; len];
            for &idx in order.iter().take(kept) {
                data[idx] = x.data()[idx];
            }
            Ok((
                Matrix::new(rows, cols, data)?,
                BaselinePayload {
                    floats: kept,
                    raw_bits: 64 * kept as u64,
                },
            ))
        }
        BaselineCompressor::SvdRank1 => {
            let v = top_right_singular_vector(x)?;
            let xv = x.mat_vec(&v)?;
            Ok((
                Matrix::outer(&xv, &v),
                BaselinePayload {
                    floats: rows + cols,
                    raw_bits: 0,
                },
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{sample_unit_sphere, singular_spectrum, RngStream};

    #[test]
    fn sign_norm_is_exact_on_uniform_magnitude() {
        // All entries are +-0.5, so the mean magnitude is exactly 0.5 and the
        // reconstruction is bit-exact.
        let x = Matrix::new(2, 3, vec![0.5, -0.5, 0.5, 0.5, -0.5, -0.5]).unwrap();
        let (y, payload) = baseline_compress(&BaselineCompressor::SignNorm, &x).unwrap();
        assert_eq!(y, x);
        assert_eq!(payload, BaselinePayload { floats: 1, raw_bits: 6 });
    }

    #[test]
    fn sign_norm_magnitudes_are_uniform() {
        let mut rng = RngStream::new(6);
        let x = rng.standard_normal_matrix(5, 5);
        let (y, _) = baseline_compress(&BaselineCompressor::SignNorm, &x).unwrap();
        let mag = y.data()[0].abs();
        assert!(y.data().iter().all(|v| (v.abs() - mag).abs() <= 1e-15));
        let expected = x.data().iter().map(|v| v.abs()).sum::<f64>() / 25.0;
        assert!((mag - expected).abs() <= 1e-15);
    }

    #[test]
    fn top_fraction_keeps_largest_entries() {
        let x = Matrix::new(1, 5, vec![0.1, -4.0, 2.0, -0.2, 3.0]).unwrap();
        let (y, payload) =
            baseline_compress(&BaselineCompressor::TopFraction { fraction: 0.5 }, &x).unwrap();
        // ceil(0.5 * 5) = 3 entries: -4, 3, 2.
        assert_eq!(y.data(), &[0.0, -4.0, 2.0, 0.0, 3.0]);
        assert_eq!(payload, BaselinePayload { floats: 3, raw_bits: 192 });
    }

    #[test]
    fn top_fraction_one_is_identity() {
        let mut rng = RngStream::new(7);
        let x = rng.standard_normal_matrix(4, 4);
        let (y, payload) =
            baseline_compress(&BaselineCompressor::TopFraction { fraction: 1.0 }, &x).unwrap();
        assert_eq!(y, x);
        assert_eq!(payload.floats, 16);
    }

    #[test]
    fn top_fraction_validates_range() {
        let x = Matrix::zeros(2, 2);
        for bad in [0.0, -0.5, 1.5] {
            assert!(
                baseline_compress(&BaselineCompressor::TopFraction { fraction: bad }, &x).is_err()
            );
        }
    }

    #[test]
    fn svd_rank1_reproduces_rank_one_input() {
        let mut rng = RngStream::new(8);
        let u = sample_unit_sphere(6, &mut rng).unwrap();
        let v = sample_unit_sphere(4, &mut rng).unwrap();
        let x = Matrix::outer(&u, &v).scaled(-2.5);
        let (y, payload) = baseline_compress(&BaselineCompressor::SvdRank1, &x).unwrap();
        assert!(x.max_abs_diff(&y).unwrap() <= 1e-10);
        assert_eq!(payload, BaselinePayload { floats: 10, raw_bits: 0 });
    }

    #[test]
    fn svd_rank1_output_is_rank_one_and_optimal_energy() {
        let mut rng = RngStream::new(9);
        let x = rng.standard_normal_matrix(7, 5);
        let (y, _) = baseline_compress(&BaselineCompressor::SvdRank1, &x).unwrap();
        let s = singular_spectrum(&y).unwrap();
        assert!(s[1] <= 1e-9 * s[0]);
        let top = singular_spectrum(&x).unwrap()[0];
        assert!((y.frob_norm() - top).abs() <= 1e-9 * top);
    }
}
