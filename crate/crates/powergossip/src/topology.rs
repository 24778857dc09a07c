//! Gossip topologies: symmetric doubly stochastic mixing matrices over an
//! undirected edge set.
//!
//! A `MixingMatrix` bundles the weight matrix `W`, the edge list, and the
//! cached spectral gap `rho = 1 - lambda_2(W^2)`, where `lambda_2(W^2)` is
//! the second largest eigenvalue of `W^2`. Averaging with `W` contracts the
//! distance to consensus by at least `1 - rho` per round, so every protocol
//! rate in this crate is expressed through `rho`.

use crate::error::{Error, Result};
use crate::numerics::{sym_eigen, Matrix};

/// Spectral gaps this small are treated as "no gap": the graph is
/// disconnected or the weights are degenerate.
const MIN_SPECTRAL_GAP: f64 = 1e-12;
const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct MixingMatrix {
    n: usize,
    weights: Matrix,
    /// Undirected edges as `(i, j)` with `i < j`, sorted; self-links excluded.
    edges: Vec<(usize, usize)>,
    rho: f64,
}

impl MixingMatrix {
    /// Ring of `n >= 3` nodes where each node gives `neighbor_weight` to each
    /// ring neighbor and keeps the rest. Requires `0 < neighbor_weight <= 0.5`
    /// so the diagonal stays nonnegative.
    pub fn ring(n: usize, neighbor_weight: f64) -> Result<Self> {
        if n < 3 {
            return Err(Error::invalid(format!("ring needs at least 3 nodes, got {n}")));
        }
        if !(neighbor_weight > 0.0 && neighbor_weight <= 0.5) {
            return Err(Error::invalid(format!(
                "ring neighbor weight must lie in (0, 0.5], got {neighbor_weight}"
            )));
        }
        let mut w = Matrix::zeros(n, n);
        let mut edges = Vec::with_capacity(n);
        for i in 0..n {
            let j = (i + 1) % n;
            let (a, b) = (i.min(j), i.max(j));
            // n = 3 closes the ring on an existing pair; avoid duplicating it.
            if !edges.contains(&(a, b)) {
                edges.push((a, b));
            }
        }
        edges.sort_unstable();
        for &(i, j) in &edges {
            w.set(i, j, w.get(i, j) + neighbor_weight);
            w.set(j, i, w.get(j, i) + neighbor_weight);
        }
        for i in 0..n {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| w.get(i, j)).sum();
            w.set(i, i, 1.0 - off);
        }
        Self::from_weights(w, &edges)
    }

    /// Complete graph with uniform weights `1/n`; one round reaches the
    /// exact average, so `rho = 1`.
    pub fn complete(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("complete graph needs at least one node"));
        }
        let w = Matrix::from_fn(n, n, |_, _| 1.0 / n as f64)?;
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                edges.push((i, j));
            }
        }
        Self::from_weights(w, &edges)
    }

    /// Validates an explicit weight matrix against an edge list and caches
    /// its spectral gap. Checks, in order: squareness, exact symmetry, row
    /// and column sums within `1e-12` of one, zero weight off the edge set,
    /// and a positive spectral gap.
    pub fn from_weights(weights: Matrix, edges: &[(usize, usize)]) -> Result<Self> {
        let n = weights.rows();
        if weights.cols() != n || n == 0 {
            return Err(Error::ShapeMismatch {
                context: "mixing matrix".to_string(),
                expected: (n.max(1), n.max(1)),
                got: weights.shape(),
            });
        }
        let mut edges: Vec<(usize, usize)> = edges.to_vec();
        edges.sort_unstable();
        edges.dedup();
        for &(i, j) in &edges {
            if i >= j || j >= n {
                return Err(Error::invalid(format!(
                    "edge ({i}, {j}) is not a valid pair for {n} nodes"
                )));
            }
        }

        let mut max_dev = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                max_dev = max_dev.max((weights.get(i, j) - weights.get(j, i)).abs());
            }
        }
        if max_dev > 0.0 {
            return Err(Error::Asymmetric { max_dev });
        }
        for i in 0..n {
            let row: f64 = (0..n).map(|j| weights.get(i, j)).sum();
            if (row - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::NotStochastic {
                    axis: "row",
                    index: i,
                    sum: row,
                });
            }
            let col: f64 = (0..n).map(|j| weights.get(j, i)).sum();
            if (col - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::NotStochastic {
                    axis: "column",
                    index: i,
                    sum: col,
                });
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let v = weights.get(i, j);
                if v != 0.0 && edges.binary_search(&(i, j)).is_err() {
                    return Err(Error::OffEdgeWeight { i, j, value: v });
                }
            }
        }

        let rho = compute_spectral_gap(&weights)?;
        if rho <= MIN_SPECTRAL_GAP {
            return Err(Error::NoSpectralGap { rho });
        }
        Ok(MixingMatrix {
            n,
            weights,
            edges,
            rho,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights.get(i, j)
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Cached spectral gap `rho = 1 - lambda_2(W^2)`, in `(0, 1]`.
    pub fn spectral_gap(&self) -> f64 {
        self.rho
    }

    pub fn degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == i || b == i).count()
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == i {
                    Some(b)
                } else if b == i {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }
}

/// `1 - lambda_2(W^2)` for a symmetric `W`; a single node has gap 1 by
/// convention (it is already at consensus).
fn compute_spectral_gap(weights: &Matrix) -> Result<f64> {
    let n = weights.rows();
    if n == 1 {
        return Ok(1.0);
    }
    let eig = sym_eigen(weights)?;
    let mut squares: Vec<f64> = eig.values.iter().map(|l| l * l).collect();
    squares.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(1.0 - squares[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    /// Regression constant for the 8-ring with neighbor weight 0.436,
    /// frozen from the analytic circulant eigenvalues
    /// `lambda_k = (1 - 2w) + 2w cos(2 pi k / n)`.
    const EIGHT_RING_RHO: f64 = 0.44557513902216461;

    fn ring_rho_analytic(n: usize, w: f64) -> f64 {
        let lams: Vec<f64> = (0..n)
            .map(|k| (1.0 - 2.0 * w) + 2.0 * w * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos())
            .collect();
        let mut sq: Vec<f64> = lams.iter().map(|l| l * l).collect();
        sq.sort_by(|a, b| b.partial_cmp(a).unwrap());
        1.0 - sq[1]
    }

    #[test]
    fn eight_ring_weights_and_gap() {
        let m = MixingMatrix::ring(8, 0.436).unwrap();
        assert_eq!(m.edges().len(), 8);
        for i in 0..8 {
            assert!((m.weight(i, i) - 0.128).abs() <= 1e-15);
            assert!((m.weight(i, (i + 1) % 8) - 0.436).abs() <= 1e-15);
            assert_eq!(m.degree(i), 2);
        }
        assert!((m.spectral_gap() - EIGHT_RING_RHO).abs() <= 1e-12);
        assert!((m.spectral_gap() - ring_rho_analytic(8, 0.436)).abs() <= 1e-12);
    }

    #[test]
    fn sixteen_ring_thirds() {
        let m = MixingMatrix::ring(16, 1.0 / 3.0).unwrap();
        for i in 0..16 {
            assert!((m.weight(i, i) - 1.0 / 3.0).abs() <= 1e-15);
        }
        assert!((m.spectral_gap() - ring_rho_analytic(16, 1.0 / 3.0)).abs() <= 1e-12);
    }

    #[test]
    fn three_ring_with_third_is_complete() {
        let m = MixingMatrix::ring(3, 1.0 / 3.0).unwrap();
        let c = MixingMatrix::complete(3).unwrap();
        assert!(m.weights().max_abs_diff(c.weights()).unwrap() <= 1e-15);
        assert!((m.spectral_gap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn complete_graph_gap_is_one() {
        for n in [1usize, 2, 4, 8, 13] {
            let m = MixingMatrix::complete(n).unwrap();
            assert!((m.spectral_gap() - 1.0).abs() <= 1e-12, "n={n}");
        }
    }

    #[test]
    fn ring_parameter_validation() {
        assert!(MixingMatrix::ring(2, 0.4).is_err());
        assert!(MixingMatrix::ring(8, 0.0).is_err());
        assert!(MixingMatrix::ring(8, 0.51).is_err());
        assert!(MixingMatrix::ring(8, -0.1).is_err());
        // w = 0.5 zeroes the self weight; odd rings stay aperiodic but even
        // rings become bipartite, so their squared mixing matrix has no gap.
        assert!(MixingMatrix::ring(7, 0.5).is_ok());
        assert!(matches!(
            MixingMatrix::ring(8, 0.5),
            Err(Error::NoSpectralGap { .. })
        ));
    }

    #[test]
    fn rows_sum_to_one_exactly_within_tolerance() {
        for &(n, w) in &[(4usize, 0.25), (8, 0.436), (16, 1.0 / 3.0), (5, 0.5)] {
            let m = MixingMatrix::ring(n, w).unwrap();
            for i in 0..n {
                let s: f64 = (0..n).map(|j| m.weight(i, j)).sum();
                assert!((s - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn validation_reports_distinct_failures() {
        // Asymmetric.
        let mut w = MixingMatrix::ring(4, 0.25).unwrap().weights().clone();
        let edges: Vec<(usize, usize)> = MixingMatrix::ring(4, 0.25).unwrap().edges().to_vec();
        w.set(0, 1, 0.3);
        assert!(matches!(
            MixingMatrix::from_weights(w, &edges),
            Err(Error::Asymmetric { .. })
        ));

        // Row sums off.
        let w = Matrix::new(2, 2, vec![0.6, 0.3, 0.3, 0.6]).unwrap();
        assert!(matches!(
            MixingMatrix::from_weights(w, &[(0, 1)]),
            Err(Error::NotStochastic { .. })
        ));

        // Weight on a non-edge.
        let base = MixingMatrix::ring(4, 0.25).unwrap();
        let w = base.weights().clone();
        let fewer: Vec<(usize, usize)> = base.edges()[1..].to_vec();
        assert!(matches!(
            MixingMatrix::from_weights(w, &fewer),
            Err(Error::OffEdgeWeight { .. })
        ));

        // Disconnected: two isolated pairs mix but never agree globally.
        let mut w = Matrix::zeros(4, 4);
        for (i, j) in [(0usize, 1usize), (2, 3)] {
            w.set(i, j, 0.5);
            w.set(j, i, 0.5);
            w.set(i, i, 0.5);
            w.set(j, j, 0.5);
        }
        assert!(matches!(
            MixingMatrix::from_weights(w, &[(0, 1), (2, 3)]),
            Err(Error::NoSpectralGap { .. })
        ));
    }

    #[test]
    fn gap_shrinks_with_ring_size() {
        let mut prev = f64::INFINITY;
        for n in [4usize, 8, 16, 32] {
            let rho = MixingMatrix::ring(n, 0.25).unwrap().spectral_gap();
            assert!(rho < prev, "rho should shrink as the ring grows");
            prev = rho;
        }
    }

    #[test]
    fn mixing_step_contracts_zero_mean_deviations() {
        // For zero-mean deviations d_i, the mixed deviations satisfy
        // (1/n) sum_i ||sum_j W_ij d_j||^2 <= (1 - rho) (1/n) sum_i ||d_i||^2.
        let mut rng = RngStream::new(77);
        for &(n, w) in &[(4usize, 0.25), (8, 0.436), (7, 0.5)] {
            let m = MixingMatrix::ring(n, w).unwrap();
            for rep in 0..100 {
                let mut ds: Vec<Matrix> =
                    (0..n).map(|_| rng.standard_normal_matrix(3, 2)).collect();
                let mean = Matrix::mean_of(&ds).unwrap();
                for d in ds.iter_mut() {
                    d.add_scaled_in_place(&mean, -1.0);
                }
                let before: f64 = ds.iter().map(Matrix::frob_norm_sq).sum::<f64>() / n as f64;
                let mut after = 0.0;
                for i in 0..n {
                    let mut acc = Matrix::zeros(3, 2);
                    for (j, d) in ds.iter().enumerate() {
                        acc.add_scaled_in_place(d, m.weight(i, j));
                    }
                    after += acc.frob_norm_sq();
                }
                after /= n as f64;
                assert!(
                    after <= (1.0 - m.spectral_gap()) * before * (1.0 + 1e-10) + 1e-30,
                    "n={n} w={w} rep={rep}: {after} > (1-rho)*{before}"
                );
            }
        }
    }
}
