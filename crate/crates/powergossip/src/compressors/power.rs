//! Power-iteration compression of a pairwise difference.
//!
//! Each undirected edge `(i, j)` with `i < j` owns one [`EdgeState`]: a block
//! of `rank` vectors and a step counter. One [`power_step`] advances the
//! block by a single multiplication with the current difference
//! `D = X_j - X_i` (odd steps) or its transpose (even steps), and returns the
//! rank-`rank` approximation built from that multiplication. Because the
//! difference keeps shrinking along previously transmitted directions while
//! the block keeps being multiplied by it, the block tracks the difference's
//! dominant singular subspace across rounds.
//!
//! Both endpoints derive the block's initial value from the shared edge
//! stream (node `j` holds the negated copy, which produces the identical
//! approximation), so the state costs no extra communication.
//!
//! The difference matrix itself is never formed. `power_step` only sees an
//! abstract [`DifferenceProducts`] multiplier, mirroring the distributed
//! reality where each node multiplies its own matrix by the incoming vector
//! block and ships `rank` vectors back.

use crate::error::{Error, Result};
use crate::numerics::{orthonormalize, vec_norm, Matrix, RngStream};

const DEGENERATE_PRODUCT_TOL: f64 = 1e-14;

/// Access to products with a difference matrix `D` and its transpose.
pub trait DifferenceProducts {
    /// `(rows, cols)` of `D`.
    fn shape(&self) -> (usize, usize);
    /// `D * v` for a `cols x rank` block.
    fn right_products(&self, v: &Matrix) -> Result<Matrix>;
    /// `D' * u` for a `rows x rank` block.
    fn left_products(&self, u: &Matrix) -> Result<Matrix>;
}

/// The difference `right - left` between two node states, exposed through
/// products only. Each product is computed as the difference of two
/// node-local products, exactly as the two endpoints would.
pub struct PairDifference<'a> {
    pub left: &'a Matrix,
    pub right: &'a Matrix,
}

impl DifferenceProducts for PairDifference<'_> {
    fn shape(&self) -> (usize, usize) {
        self.left.shape()
    }

    fn right_products(&self, v: &Matrix) -> Result<Matrix> {
        let a = self.right.mul(v)?;
        let b = self.left.mul(v)?;
        a.sub(&b)
    }

    fn left_products(&self, u: &Matrix) -> Result<Matrix> {
        let a = self.right.t_mul(u)?;
        let b = self.left.t_mul(u)?;
        a.sub(&b)
    }
}

/// Per-edge compression state: the canonical copy for the edge `(i, j)` with
/// `i < j`. Odd steps expect the block in difference column space `R^cols`,
/// even steps in `R^rows`; the counter tracks which applies next.
#[derive(Clone, Debug)]
pub struct EdgeState {
    edge: (usize, usize),
    rank: usize,
    /// Current (unnormalized) vector block; `cols x rank` before an odd step,
    /// `rows x rank` before an even step.
    block: Matrix,
    /// Completed steps. Step `k+1` is odd when `k` is even.
    steps: u64,
    rng: RngStream,
}

impl EdgeState {
    /// Fresh state whose block is entry-wise standard normal in `R^cols`,
    /// drawn from `rng` (derive it from the shared edge stream).
    pub fn init(edge: (usize, usize), rank: usize, cols: usize, mut rng: RngStream) -> Result<Self> {
        if edge.0 >= edge.1 {
            return Err(Error::invalid(format!(
                "edge state wants a canonical pair (i < j), got ({}, {})",
                edge.0, edge.1
            )));
        }
        if rank == 0 || cols == 0 {
            return Err(Error::invalid("edge state needs positive rank and dimension"));
        }
        if rank > cols {
            return Err(Error::invalid(format!(
                "rank {rank} exceeds difference dimension {cols}"
            )));
        }
        let block = rng.standard_normal_matrix(cols, rank);
        Ok(EdgeState {
            edge,
            rank,
            block,
            steps: 0,
            rng,
        })
    }

    pub fn edge(&self) -> (usize, usize) {
        self.edge
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// The current unnormalized vector block. In `R^cols x rank` before an
    /// odd step, `R^rows x rank` before an even step.
    pub fn block(&self) -> &Matrix {
        &self.block
    }

    /// True when the next step multiplies `D` by the block (block lives in
    /// `R^cols`); false when it multiplies `D'` (block lives in `R^rows`).
    pub fn next_step_is_right(&self) -> bool {
        self.steps % 2 == 0
    }

    fn replace_block(&mut self, dim: usize) -> Result<()> {
        let mut fresh = Matrix::zeros(dim, self.rank);
        for c in 0..self.rank {
            let col = crate::numerics::sample_unit_sphere(dim, &mut self.rng)?;
            fresh.set_column(c, &col);
        }
        self.block = fresh;
        Ok(())
    }
}

/// Result of one power step.
#[derive(Debug)]
pub struct PowerStepOutput {
    /// Rank-`rank` approximation of the difference, shaped like it.
    pub approximation: Matrix,
    /// Floats each endpoint sends for this step: `rank` product vectors.
    pub floats_per_direction: usize,
    /// True when the products vanished and the block was re-randomized.
    pub degenerate: bool,
}

/// Advances an edge state by one power-iteration step against `diff`.
///
/// Odd steps normalize the block to `V`, form the products `P = D V`
/// (exchanged between the endpoints), emit the approximation `P V'`, and
/// carry `P` forward as the next block. Even steps do the same against the
/// transpose. If the products' norm falls below `1e-14` times the block norm,
/// the approximation is zero and the block is re-randomized from the unit
/// sphere without advancing the step parity.
pub fn power_step<D: DifferenceProducts>(
    state: &mut EdgeState,
    diff: &D,
) -> Result<PowerStepOutput> {
    let (rows, cols) = diff.shape();
    if state.rank > rows.min(cols) {
        return Err(Error::invalid(format!(
            "edge state rank {} exceeds min dimension of {}x{} difference",
            state.rank, rows, cols
        )));
    }
    let odd = state.next_step_is_right();
    let expected_dim = if odd { cols } else { rows };
    if state.block.rows() != expected_dim {
        return Err(Error::ShapeMismatch {
            context: "power step block".to_string(),
            expected: (expected_dim, state.rank),
            got: state.block.shape(),
        });
    }

    let basis = if state.rank == 1 {
        let col = state.block.column(0);
        let n = vec_norm(&col);
        if n < 1e-300 {
            // The stored vector itself degenerated; resample and retry on the
            // next call rather than dividing by zero.
            state.replace_block(expected_dim)?;
            return Ok(PowerStepOutput {
                approximation: Matrix::zeros(rows, cols),
                floats_per_direction: state.rank * if odd { rows } else { cols },
                degenerate: true,
            });
        }
        let unit: Vec<f64> = col.iter().map(|x| x / n).collect();
        let mut m = Matrix::zeros(expected_dim, 1);
        m.set_column(0, &unit);
        m
    } else {
        orthonormalize(&state.block, &mut state.rng)?
    };

    let products = if odd {
        diff.right_products(&basis)?
    } else {
        diff.left_products(&basis)?
    };
    let sent = state.rank * products.rows();

    // The normalized block has Frobenius norm sqrt(rank).
    if products.frob_norm() < DEGENERATE_PRODUCT_TOL * (state.rank as f64).sqrt() {
        state.replace_block(expected_dim)?;
        return Ok(PowerStepOutput {
            approximation: Matrix::zeros(rows, cols),
            floats_per_direction: sent,
            degenerate: true,
        });
    }

    let approximation = if odd {
        products.mul_t(&basis)?
    } else {
        basis.mul_t(&products)?
    };
    state.block = products;
    state.steps += 1;
    Ok(PowerStepOutput {
        approximation,
        floats_per_direction: sent,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::sample_unit_sphere;

    fn edge_rng(tag: u64) -> RngStream {
        RngStream::new(tag).derive("edge", 0).derive("to", 1)
    }

    #[test]
    fn init_validates_arguments() {
        assert!(EdgeState::init((1, 0), 1, 4, edge_rng(0)).is_err());
        assert!(EdgeState::init((0, 1), 0, 4, edge_rng(0)).is_err());
        assert!(EdgeState::init((0, 1), 5, 4, edge_rng(0)).is_err());
        assert!(EdgeState::init((0, 1), 2, 4, edge_rng(0)).is_ok());
    }

    #[test]
    fn rank_one_step_on_rank_one_difference_is_exact() {
        let mut rng = RngStream::new(9);
        let u = sample_unit_sphere(6, &mut rng).unwrap();
        let v = sample_unit_sphere(4, &mut rng).unwrap();
        let d = Matrix::outer(&u, &v).scaled(3.0);
        let zero = Matrix::zeros(6, 4);
        let diff = PairDifference { left: &zero, right: &d };
        let mut state = EdgeState::init((0, 1), 1, 4, edge_rng(1)).unwrap();
        // After one odd and one even step the block aligns with the only
        // singular direction, so the next approximation is exact.
        for _ in 0..3 {
            let out = power_step(&mut state, &diff).unwrap();
            assert!(!out.degenerate);
            let last = out.approximation;
            if state.steps() >= 2 {
                assert!(last.max_abs_diff(&d).unwrap() <= 1e-12);
            }
        }
    }

    #[test]
    fn parity_alternates_and_counts_floats() {
        let mut rng = RngStream::new(10);
        let a = rng.standard_normal_matrix(5, 3);
        let b = rng.standard_normal_matrix(5, 3);
        let diff = PairDifference { left: &a, right: &b };
        let mut state = EdgeState::init((0, 1), 1, 3, edge_rng(2)).unwrap();
        let out1 = power_step(&mut state, &diff).unwrap();
        assert_eq!(out1.floats_per_direction, 5);
        assert!(!state.next_step_is_right());
        let out2 = power_step(&mut state, &diff).unwrap();
        assert_eq!(out2.floats_per_direction, 3);
        assert!(state.next_step_is_right());
    }

    #[test]
    fn equal_states_degenerate_and_rerandomize() {
        let mut rng = RngStream::new(11);
        let x = rng.standard_normal_matrix(4, 4);
        let diff = PairDifference { left: &x, right: &x };
        let mut state = EdgeState::init((0, 1), 1, 4, edge_rng(3)).unwrap();
        let before = state.block.clone();
        let out = power_step(&mut state, &diff).unwrap();
        assert!(out.degenerate);
        assert_eq!(out.approximation, Matrix::zeros(4, 4));
        assert_eq!(state.steps(), 0);
        assert!(state.next_step_is_right());
        assert!(state.block.max_abs_diff(&before).unwrap() > 1e-6);
        // Unit-sphere re-randomization.
        assert!((vec_norm(&state.block.column(0)) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn antisymmetry_is_exact() {
        // Compressing X_j - X_i with block v equals the negation of
        // compressing X_i - X_j with block -v, bit for bit.
        let mut rng = RngStream::new(12);
        let a = rng.standard_normal_matrix(6, 5);
        let b = rng.standard_normal_matrix(6, 5);
        let mut fwd = EdgeState::init((0, 1), 1, 5, edge_rng(4)).unwrap();
        let mut rev = fwd.clone();
        rev.block = rev.block.scaled(-1.0);

        for _ in 0..6 {
            let out_f = power_step(&mut fwd, &PairDifference { left: &a, right: &b }).unwrap();
            let out_r = power_step(&mut rev, &PairDifference { left: &b, right: &a }).unwrap();
            let neg = out_r.approximation.scaled(-1.0);
            assert_eq!(out_f.approximation.data(), neg.data());
        }
    }

    #[test]
    fn sign_of_block_does_not_change_output() {
        let mut rng = RngStream::new(13);
        let a = rng.standard_normal_matrix(5, 4);
        let b = rng.standard_normal_matrix(5, 4);
        let diff = PairDifference { left: &a, right: &b };
        let mut plus = EdgeState::init((0, 1), 1, 4, edge_rng(5)).unwrap();
        let mut minus = plus.clone();
        minus.block = minus.block.scaled(-1.0);
        for _ in 0..6 {
            let op = power_step(&mut plus, &diff).unwrap();
            let om = power_step(&mut minus, &diff).unwrap();
            assert_eq!(op.approximation.data(), om.approximation.data());
        }
    }

    #[test]
    fn block_steps_track_dominant_subspace() {
        // Rank-2 block on a spiked spectrum captures more energy than the
        // third singular value leaves behind.
        let mut rng = RngStream::new(14);
        let u = orthonormalize(&rng.standard_normal_matrix(8, 3), &mut rng).unwrap();
        let v = orthonormalize(&rng.standard_normal_matrix(6, 3), &mut rng).unwrap();
        let d = u
            .scale_columns(&[5.0, 4.0, 0.5])
            .unwrap()
            .mul_t(&v)
            .unwrap();
        let zero = Matrix::zeros(8, 6);
        let diff = PairDifference { left: &zero, right: &d };
        let mut state = EdgeState::init((0, 1), 2, 6, edge_rng(6)).unwrap();
        let mut last = Matrix::zeros(8, 6);
        for _ in 0..20 {
            last = power_step(&mut state, &diff).unwrap().approximation;
        }
        let resid = d.sub(&last).unwrap().frob_norm_sq();
        assert!(resid <= 0.5 * 0.5 * 1.0001, "residual {resid} exceeds sigma_3^2");
    }
}
