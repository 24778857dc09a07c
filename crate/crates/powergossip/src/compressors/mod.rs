//! Compression operators for gossip payloads.
//!
//! Three families live here:
//!
//! * random linear projections ([`LinearProjectionCompressor`]): unbiased up
//!   to a known scale `delta`, linear, and idempotent, so both endpoints of
//!   an edge can apply one shared realization and the update still telescopes;
//! * the power-iteration state machine ([`EdgeState`] / [`power_step`]) that
//!   refines one low-rank approximation per edge across rounds;
//! * memory-based baseline quantizers ([`BaselineCompressor`]) used by the
//!   public-copy gossip protocol.

mod baseline;
mod power;

pub use baseline::{baseline_compress, BaselineCompressor, BaselinePayload};
pub use power::{power_step, DifferenceProducts, EdgeState, PairDifference, PowerStepOutput};

use crate::error::{Error, Result};
use crate::numerics::{orthonormalize, Matrix, RngStream};

/// A random linear projection family with a known expectation scale.
///
/// Each realization `P` drawn from the family satisfies, over the draw,
/// `E[P(X)] = delta * X`, with `P` linear and idempotent. `delta` is the
/// fraction of signal energy kept on average.
#[derive(Clone, Debug, PartialEq)]
pub enum LinearProjectionCompressor {
    /// Keeps everything; `delta = 1`.
    Identity,
    /// Keeps each entry independently with probability `p_keep`; `delta = p_keep`.
    RandomEntry { p_keep: f64 },
    /// Projects columns onto a uniformly random `rank`-dimensional subspace
    /// of row space: `X -> (X U) U'` with `U` a `cols x rank` orthonormal
    /// basis; `delta = rank / cols`.
    RandomRight { rank: usize },
    /// Mirror image on the left: `X -> V (V' X)` with `V` `rows x rank`;
    /// `delta = rank / rows`.
    RandomLeft { rank: usize },
}

impl LinearProjectionCompressor {
    /// Expected fraction of a `rows x cols` matrix kept by this family.
    pub fn delta(&self, rows: usize, cols: usize) -> Result<f64> {
        self.validate(rows, cols)?;
        Ok(match self {
            LinearProjectionCompressor::Identity => 1.0,
            LinearProjectionCompressor::RandomEntry { p_keep } => *p_keep,
            LinearProjectionCompressor::RandomRight { rank } => *rank as f64 / cols as f64,
            LinearProjectionCompressor::RandomLeft { rank } => *rank as f64 / rows as f64,
        })
    }

    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("projection target must be non-empty"));
        }
        match self {
            LinearProjectionCompressor::Identity => Ok(()),
            LinearProjectionCompressor::RandomEntry { p_keep } => {
                if *p_keep > 0.0 && *p_keep <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::invalid(format!(
                        "entry keep probability must lie in (0, 1], got {p_keep}"
                    )))
                }
            }
            LinearProjectionCompressor::RandomRight { rank } => {
                if *rank >= 1 && *rank <= cols {
                    Ok(())
                } else {
                    Err(Error::invalid(format!(
                        "right projection rank {rank} out of range 1..={cols}"
                    )))
                }
            }
            LinearProjectionCompressor::RandomLeft { rank } => {
                if *rank >= 1 && *rank <= rows {
                    Ok(())
                } else {
                    Err(Error::invalid(format!(
                        "left projection rank {rank} out of range 1..={rows}"
                    )))
                }
            }
        }
    }
}

/// One concrete draw from a projection family. Applying the same realization
/// to different matrices is what lets edge endpoints compress consistently.
#[derive(Clone, Debug)]
pub enum RealizedProjection {
    Identity { rows: usize, cols: usize },
    /// Row-major keep mask.
    Mask { rows: usize, cols: usize, keep: Vec<bool> },
    /// Orthonormal `cols x rank` basis; applies as `(X U) U'`.
    RightBasis { basis: Matrix },
    /// Orthonormal `rows x rank` basis; applies as `V (V' X)`.
    LeftBasis { basis: Matrix },
}

impl RealizedProjection {
    /// Applies this realization. Linear in `X`, and applying it twice gives
    /// the same result as once (up to roundoff for the subspace variants).
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            RealizedProjection::Identity { rows, cols } => {
                check_shape(x, *rows, *cols, "identity projection")?;
                Ok(x.clone())
            }
            RealizedProjection::Mask { rows, cols, keep } => {
                check_shape(x, *rows, *cols, "entry mask")?;
                let data = x
                    .data()
                    .iter()
                    .zip(keep)
                    .map(|(&v, &k)| if k { v } else { 0.0 })
                    .collect();
                Matrix::new(*rows, *cols, data)
            }
            RealizedProjection::RightBasis { basis } => {
                if x.cols() != basis.rows() {
                    return Err(Error::ShapeMismatch {
                        context: "right projection".to_string(),
                        expected: (x.rows(), basis.rows()),
                        got: x.shape(),
                    });
                }
                x.mul(basis)?.mul_t(basis)
            }
            RealizedProjection::LeftBasis { basis } => {
                if x.rows() != basis.rows() {
                    return Err(Error::ShapeMismatch {
                        context: "left projection".to_string(),
                        expected: (basis.rows(), x.cols()),
                        got: x.shape(),
                    });
                }
                basis.mul(&basis.t_mul(x)?)
            }
        }
    }

    /// Floats a node must put on the wire so that a peer who knows the
    /// realization can reconstruct the projected matrix.
    pub fn payload_floats(&self, rows: usize, cols: usize) -> usize {
        match self {
            RealizedProjection::Identity { .. } => rows * cols,
            RealizedProjection::Mask { keep, .. } => keep.iter().filter(|&&k| k).count(),
            RealizedProjection::RightBasis { basis } => rows * basis.cols(),
            RealizedProjection::LeftBasis { basis } => basis.cols() * cols,
        }
    }
}

fn check_shape(x: &Matrix, rows: usize, cols: usize, context: &str) -> Result<()> {
    if x.shape() != (rows, cols) {
        return Err(Error::ShapeMismatch {
            context: context.to_string(),
            expected: (rows, cols),
            got: x.shape(),
        });
    }
    Ok(())
}

/// Draws one realization of `family` for `rows x cols` matrices.
pub fn sample_projection(
    family: &LinearProjectionCompressor,
    rows: usize,
    cols: usize,
    rng: &mut RngStream,
) -> Result<RealizedProjection> {
    family.validate(rows, cols)?;
    Ok(match family {
        LinearProjectionCompressor::Identity => RealizedProjection::Identity { rows, cols },
        LinearProjectionCompressor::RandomEntry { p_keep } => {
            let keep = (0..rows * cols).map(|_| rng.bernoulli(*p_keep)).collect();
            RealizedProjection::Mask { rows, cols, keep }
        }
        LinearProjectionCompressor::RandomRight { rank } => {
            let g = rng.standard_normal_matrix(cols, *rank);
            RealizedProjection::RightBasis {
                basis: orthonormalize(&g, rng)?,
            }
        }
        LinearProjectionCompressor::RandomLeft { rank } => {
            let g = rng.standard_normal_matrix(rows, *rank);
            RealizedProjection::LeftBasis {
                basis: orthonormalize(&g, rng)?,
            }
        }
    })
}

/// Draws a fresh realization and applies it, returning both so the caller
/// can re-apply the identical realization elsewhere.
pub fn apply_projection(
    family: &LinearProjectionCompressor,
    x: &Matrix,
    rng: &mut RngStream,
) -> Result<(Matrix, RealizedProjection)> {
    let tag = sample_projection(family, x.rows(), x.cols(), rng)?;
    let y = tag.apply(x)?;
    Ok((y, tag))
}

/// Applies an existing realization to another matrix.
pub fn reapply_projection(tag: &RealizedProjection, x: &Matrix) -> Result<Matrix> {
    tag.apply(x)
}

/// Ratio of full-matrix floats to the floats moved by `iters` power-iteration
/// exchanges of `rank` vectors: `(p q) / (rank * iters * (p + q) / 2)`. The
/// denominator averages the two vector lengths because successive steps
/// alternate between them.
pub fn compression_ratio(p: usize, q: usize, rank: usize, iters: usize) -> Result<f64> {
    if p == 0 || q == 0 || rank == 0 || iters == 0 {
        return Err(Error::invalid(
            "compression ratio needs positive dimensions, rank, and iteration count",
        ));
    }
    Ok((p * q) as f64 / (rank as f64 * iters as f64 * (p + q) as f64 / 2.0))
}
