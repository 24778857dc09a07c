//! Shared numeric kernels: dense matrices, deterministic random streams, and
//! a symmetric eigensolver. Everything above this module builds on these
//! primitives, so they enforce the global invariants (finite entries,
//! reproducible randomness) at the lowest level.

mod eigen;
mod matrix;
mod rng;

pub use eigen::{orthonormalize, singular_spectrum, sym_eigen, top_right_singular_vector, SymEigen};
pub use matrix::{vec_dot, vec_norm, Matrix};
pub use rng::{sample_unit_sphere, RngStream};
