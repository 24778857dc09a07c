//! Synthetic data and initial-state generation for experiments.
//!
//! Everything here is a pure function of the passed stream, so the harness
//! can re-derive identical data from a run's seed.

use crate::error::{Error, Result};
use crate::harness::config::{DataSourceConfig, InitKind, LossConfig};
use crate::numerics::{orthonormalize, Matrix, RngStream};
use crate::optimization::{LossKind, LossModel, NodeData};

/// Builds the per-node matrices for a consensus run. Node `i` draws from the
/// child stream ("node_data", i), so adding nodes never reshuffles the data
/// of existing ones.
pub fn generate_node_data(
    source: &DataSourceConfig,
    n: usize,
    root: &RngStream,
) -> Result<Vec<Matrix>> {
    if n == 0 {
        return Err(Error::invalid("data generation for zero nodes"));
    }
    match source {
        DataSourceConfig::Gaussian { p, q } => {
            check_shape(*p, *q)?;
            Ok((0..n)
                .map(|i| {
                    root.derive("node_data", i as u64)
                        .standard_normal_matrix(*p, *q)
                })
                .collect())
        }
        DataSourceConfig::Lowrank { p, q, rank, noise } => {
            check_shape(*p, *q)?;
            if *rank == 0 || *rank > (*p).min(*q) {
                return Err(Error::invalid(format!(
                    "lowrank rank {rank} must lie in 1..={}",
                    (*p).min(*q)
                )));
            }
            if !(*noise >= 0.0 && noise.is_finite()) {
                return Err(Error::invalid(format!(
                    "lowrank noise must be finite and non-negative, got {noise}"
                )));
            }
            // Geometrically decaying spectrum, scaled so entries are O(1).
            let scale = ((*p * *q) as f64).sqrt();
            let sigmas: Vec<f64> = (1..=*rank)
                .map(|m| scale * 2f64.powi(1 - m as i32))
                .collect();
            (0..n)
                .map(|i| {
                    let mut rng = root.derive("node_data", i as u64);
                    let left = orthonormalize(&rng.standard_normal_matrix(*p, *rank), &mut rng)?;
                    let right = orthonormalize(&rng.standard_normal_matrix(*q, *rank), &mut rng)?;
                    let mut x = left.scale_columns(&sigmas)?.mul_t(&right)?;
                    if *noise > 0.0 {
                        x.add_scaled_in_place(&rng.standard_normal_matrix(*p, *q), *noise);
                    }
                    Ok(x)
                })
                .collect()
        }
        DataSourceConfig::File { paths } => {
            if paths.len() != n {
                return Err(Error::invalid(format!(
                    "{} matrix files for {n} nodes",
                    paths.len()
                )));
            }
            let mut matrices = Vec::with_capacity(n);
            for (i, path) in paths.iter().enumerate() {
                let m = Matrix::read_text(path)?;
                if let Some(first) = matrices.first() {
                    let first: &Matrix = first;
                    if m.shape() != first.shape() {
                        return Err(Error::ShapeMismatch {
                            context: format!("matrix file for node {i} ({})", path.display()),
                            expected: first.shape(),
                            got: m.shape(),
                        });
                    }
                }
                matrices.push(m);
            }
            Ok(matrices)
        }
    }
}

fn check_shape(p: usize, q: usize) -> Result<()> {
    if p == 0 || q == 0 {
        return Err(Error::invalid(format!(
            "matrix shape {p} x {q} must have positive dimensions"
        )));
    }
    Ok(())
}

/// Builds the per-node datasets of an optimization run.
///
/// Zero heterogeneity replicates one dataset on every node (so the node
/// objectives coincide exactly); a positive value adds per-node feature and
/// target perturbations of that scale around the shared reference.
pub fn build_loss_model(cfg: &LossConfig, n: usize, root: &RngStream) -> Result<LossModel> {
    if n == 0 {
        return Err(Error::invalid("loss generation for zero nodes"));
    }
    match *cfg {
        LossConfig::Quadratic { p, q, rows_per_node, noise, heterogeneity, mu_reg } => {
            check_shape(p, q)?;
            check_loss_params(rows_per_node, noise, heterogeneity)?;
            let mut shared = root.derive("loss", 0);
            let x_ref = shared.standard_normal_matrix(p, q);
            let a_ref = shared.standard_normal_matrix(rows_per_node, p);
            let nodes: Vec<NodeData> = if heterogeneity == 0.0 {
                let mut targets = a_ref.mul(&x_ref)?;
                if noise > 0.0 {
                    targets.add_scaled_in_place(
                        &shared.standard_normal_matrix(rows_per_node, q),
                        noise,
                    );
                }
                vec![NodeData { features: a_ref, targets }; n]
            } else {
                (0..n)
                    .map(|i| {
                        let mut rng = root.derive("loss_node", i as u64);
                        let mut features = a_ref.clone();
                        features.add_scaled_in_place(
                            &rng.standard_normal_matrix(rows_per_node, p),
                            heterogeneity,
                        );
                        let mut x_node = x_ref.clone();
                        x_node.add_scaled_in_place(
                            &rng.standard_normal_matrix(p, q),
                            heterogeneity,
                        );
                        let mut targets = features.mul(&x_node)?;
                        if noise > 0.0 {
                            targets.add_scaled_in_place(
                                &rng.standard_normal_matrix(rows_per_node, q),
                                noise,
                            );
                        }
                        Ok(NodeData { features, targets })
                    })
                    .collect::<Result<_>>()?
            };
            LossModel::new(LossKind::Quadratic, nodes, mu_reg)
        }
        LossConfig::Logistic { p, rows_per_node, label_noise, heterogeneity, mu_reg } => {
            check_shape(p, 1)?;
            check_loss_params(rows_per_node, label_noise, heterogeneity)?;
            let mut shared = root.derive("loss", 0);
            let w_ref = shared.normal_vec(p);
            let make_node = |rng: &mut RngStream, w_node: &[f64]| -> NodeData {
                let features = rng.standard_normal_matrix(rows_per_node, p);
                let labels: Vec<f64> = (0..rows_per_node)
                    .map(|r| {
                        let mut score: f64 = features
                            .row(r)
                            .iter()
                            .zip(w_node)
                            .map(|(a, w)| a * w)
                            .sum();
                        if label_noise > 0.0 {
                            score += label_noise * rng.standard_normal();
                        }
                        if score >= 0.0 {
                            1.0
                        } else {
                            -1.0
                        }
                    })
                    .collect();
                let targets = Matrix::column_vector(&labels).expect("labels are finite");
                NodeData { features, targets }
            };
            let nodes: Vec<NodeData> = if heterogeneity == 0.0 {
                vec![make_node(&mut shared, &w_ref); n]
            } else {
                (0..n)
                    .map(|i| {
                        let mut rng = root.derive("loss_node", i as u64);
                        let w_node: Vec<f64> = w_ref
                            .iter()
                            .map(|w| w + heterogeneity * rng.standard_normal())
                            .collect();
                        make_node(&mut rng, &w_node)
                    })
                    .collect()
            };
            LossModel::new(LossKind::Logistic, nodes, mu_reg)
        }
    }
}

fn check_loss_params(rows_per_node: usize, noise: f64, heterogeneity: f64) -> Result<()> {
    if rows_per_node == 0 {
        return Err(Error::invalid("rows_per_node must be at least 1"));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::invalid(format!(
            "noise must be finite and non-negative, got {noise}"
        )));
    }
    if !(heterogeneity >= 0.0 && heterogeneity.is_finite()) {
        return Err(Error::invalid(format!(
            "heterogeneity must be finite and non-negative, got {heterogeneity}"
        )));
    }
    Ok(())
}

/// Builds the nodes' starting matrices for an optimization run.
pub fn initial_states(
    init: InitKind,
    n: usize,
    shape: (usize, usize),
    root: &RngStream,
) -> Vec<Matrix> {
    let mut rng = root.derive("init", 0);
    match init {
        InitKind::Zero => vec![Matrix::zeros(shape.0, shape.1); n],
        InitKind::SharedRandom => {
            vec![rng.standard_normal_matrix(shape.0, shape.1); n]
        }
        InitKind::PerNodeRandom => (0..n)
            .map(|_| rng.standard_normal_matrix(shape.0, shape.1))
            .collect(),
    }
}
