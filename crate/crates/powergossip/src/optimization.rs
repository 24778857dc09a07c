//! Decentralized stochastic optimization on top of the gossip protocols.
//!
//! The loss models are deliberately desk-scale: matrix-valued least squares
//! (exact smoothness and convexity constants, closed-form minimizer) and
//! binary logistic regression (convex but not quadratic). Both expose full
//! and minibatch gradients with exactly enumerable sampling variance, which
//! lets the tests pin unbiasedness and variance bounds without slack.
//!
//! Three optimizer steps are provided:
//!
//! * a plain decentralized SGD step: gossip the full states and take a local
//!   gradient step, both reading the pre-round state;
//! * the power-iteration variant: run one or more compressed gossip rounds on
//!   the differences and apply the gradient computed at the pre-step state;
//! * a sequential variant: take the gradient step first, then run one
//!   projected-difference consensus round on the results.

use serde::Serialize;

use crate::compressors::{EdgeState, LinearProjectionCompressor};
use crate::error::{Error, Result};
use crate::numerics::{sym_eigen, Matrix, RngStream};
use crate::protocols::{init_edge_states, Accounting, GossipNetwork};
use crate::topology::MixingMatrix;

const MINIMIZER_GRAD_TOL: f64 = 1e-12;
const MINIMIZER_MAX_ITERS: usize = 5_000_000;
/// Relative eigenvalue threshold below which the least-squares normal matrix
/// is treated as singular.
const SINGULAR_REL_TOL: f64 = 1e-12;

/// Which loss each node holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum LossKind {
    /// f_i(X) = ||A_i X - B_i||_F^2 / (2 m_i) + reg/2 ||X||_F^2.
    Quadratic,
    /// Binary logistic regression on (+1/-1) labels; the state has one
    /// column. f_i(x) = mean_r log(1 + exp(-y_r a_r.x)) + reg/2 ||x||^2.
    Logistic,
}

/// One node's local dataset: a feature matrix (one row per sample) and a
/// target matrix with matching row count (labels in the logistic case).
#[derive(Clone, Debug)]
pub struct NodeData {
    pub features: Matrix,
    pub targets: Matrix,
}

impl NodeData {
    pub fn samples(&self) -> usize {
        self.features.rows()
    }
}

/// A finite-sum loss split across nodes. The global objective is the
/// unweighted node average of the local objectives.
#[derive(Clone, Debug)]
pub struct LossModel {
    kind: LossKind,
    nodes: Vec<NodeData>,
    regularizer: f64,
    state_rows: usize,
    state_cols: usize,
}

impl LossModel {
    pub fn new(kind: LossKind, nodes: Vec<NodeData>, regularizer: f64) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::invalid("a loss model needs at least one node"));
        }
        if !(regularizer >= 0.0 && regularizer.is_finite()) {
            return Err(Error::invalid(format!(
                "regularizer must be a finite non-negative number, got {regularizer}"
            )));
        }
        let state_rows = nodes[0].features.cols();
        let state_cols = nodes[0].targets.cols();
        for (i, node) in nodes.iter().enumerate() {
            if node.samples() == 0 {
                return Err(Error::invalid(format!("node {i} has no samples")));
            }
            if node.features.cols() != state_rows {
                return Err(Error::ShapeMismatch {
                    context: format!("features of node {i}"),
                    expected: (node.samples(), state_rows),
                    got: node.features.shape(),
                });
            }
            if node.targets.shape() != (node.samples(), state_cols) {
                return Err(Error::ShapeMismatch {
                    context: format!("targets of node {i}"),
                    expected: (node.samples(), state_cols),
                    got: node.targets.shape(),
                });
            }
        }
        if kind == LossKind::Logistic {
            if state_cols != 1 {
                return Err(Error::invalid(format!(
                    "logistic labels must form a single column, got {state_cols}"
                )));
            }
            for (i, node) in nodes.iter().enumerate() {
                for r in 0..node.samples() {
                    let y = node.targets.get(r, 0);
                    if y != 1.0 && y != -1.0 {
                        return Err(Error::invalid(format!(
                            "logistic label of node {i} row {r} must be +1 or -1, got {y}"
                        )));
                    }
                }
            }
        }
        Ok(LossModel { kind, nodes, regularizer, state_rows, state_cols })
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Shape every iterate must have: (feature dimension, target columns).
    pub fn state_shape(&self) -> (usize, usize) {
        (self.state_rows, self.state_cols)
    }

    pub fn regularizer(&self) -> f64 {
        self.regularizer
    }

    pub fn node(&self, i: usize) -> &NodeData {
        &self.nodes[i]
    }

    pub fn min_samples(&self) -> usize {
        self.nodes.iter().map(NodeData::samples).min().unwrap_or(0)
    }

    fn check_state(&self, x: &Matrix) -> Result<()> {
        if x.shape() != self.state_shape() {
            return Err(Error::ShapeMismatch {
                context: "loss evaluation point".to_string(),
                expected: self.state_shape(),
                got: x.shape(),
            });
        }
        Ok(())
    }

    /// Local objective of one node.
    pub fn value(&self, node: usize, x: &Matrix) -> Result<f64> {
        self.check_state(x)?;
        let data = &self.nodes[node];
        let m = data.samples() as f64;
        let raw = match self.kind {
            LossKind::Quadratic => {
                let resid = data.features.mul(x)?.sub(&data.targets)?;
                resid.frob_norm_sq() / (2.0 * m)
            }
            LossKind::Logistic => {
                let scores = data.features.mul(x)?;
                let mut acc = 0.0;
                for r in 0..data.samples() {
                    acc += log1p_exp(-data.targets.get(r, 0) * scores.get(r, 0));
                }
                acc / m
            }
        };
        Ok(raw + 0.5 * self.regularizer * x.frob_norm_sq())
    }

    /// Global objective: node average of the local objectives.
    pub fn global_value(&self, x: &Matrix) -> Result<f64> {
        let mut acc = 0.0;
        for i in 0..self.n_nodes() {
            acc += self.value(i, x)?;
        }
        Ok(acc / self.n_nodes() as f64)
    }

    /// Exact gradient of one node's local objective.
    pub fn gradient(&self, node: usize, x: &Matrix) -> Result<Matrix> {
        self.check_state(x)?;
        let data = &self.nodes[node];
        self.gradient_over_rows(data, x, None)
    }

    /// Gradient over a uniformly sampled row minibatch. Rows are drawn
    /// without replacement, so `batch = m_i` reproduces the full gradient
    /// exactly.
    pub fn stochastic_gradient(
        &self,
        node: usize,
        x: &Matrix,
        batch: usize,
        rng: &mut RngStream,
    ) -> Result<Matrix> {
        self.check_state(x)?;
        let data = &self.nodes[node];
        if batch == 0 {
            return Err(Error::invalid("minibatch size must be at least 1"));
        }
        if batch > data.samples() {
            return Err(Error::invalid(format!(
                "minibatch of {batch} rows from a node with {} samples",
                data.samples()
            )));
        }
        let rows = rng.sorted_sample(data.samples(), batch)?;
        self.gradient_over_rows(data, x, Some(&rows))
    }

    /// Shared kernel for full and minibatch gradients: averages per-row
    /// gradient terms over the given rows (all rows if `None`) and adds the
    /// regularizer. Selecting all rows takes the same code path as the full
    /// gradient, which is what makes `batch = m_i` bitwise exact.
    fn gradient_over_rows(
        &self,
        data: &NodeData,
        x: &Matrix,
        rows: Option<&[usize]>,
    ) -> Result<Matrix> {
        let all: Vec<usize>;
        let rows = match rows {
            Some(r) => r,
            None => {
                all = (0..data.samples()).collect();
                &all
            }
        };
        let count = rows.len() as f64;
        let mut acc = Matrix::zeros(self.state_rows, self.state_cols);
        match self.kind {
            LossKind::Quadratic => {
                for &r in rows {
                    let a = data.features.row(r);
                    // Per-row residual a.X - b, then the outer product a (aX - b).
                    let mut resid = vec![0.0; self.state_cols];
                    for (c, res) in resid.iter_mut().enumerate() {
                        let mut s = 0.0;
                        for (k, &av) in a.iter().enumerate() {
                            s += av * x.get(k, c);
                        }
                        *res = s - data.targets.get(r, c);
                    }
                    for (k, &av) in a.iter().enumerate() {
                        for (c, &res) in resid.iter().enumerate() {
                            acc.set(k, c, acc.get(k, c) + av * res);
                        }
                    }
                }
            }
            LossKind::Logistic => {
                for &r in rows {
                    let a = data.features.row(r);
                    let y = data.targets.get(r, 0);
                    let mut score = 0.0;
                    for (k, &av) in a.iter().enumerate() {
                        score += av * x.get(k, 0);
                    }
                    let coeff = -y * sigmoid(-y * score);
                    for (k, &av) in a.iter().enumerate() {
                        acc.set(k, 0, acc.get(k, 0) + coeff * av);
                    }
                }
            }
        }
        let mut grad = acc.scaled(1.0 / count);
        grad.add_scaled_in_place(x, self.regularizer);
        grad.ensure_finite("gradient")?;
        Ok(grad)
    }

    /// Gradient of the global objective (node average of local gradients).
    pub fn global_gradient(&self, x: &Matrix) -> Result<Matrix> {
        let mut acc = Matrix::zeros(self.state_rows, self.state_cols);
        for i in 0..self.n_nodes() {
            acc.add_scaled_in_place(&self.gradient(i, x)?, 1.0);
        }
        Ok(acc.scaled(1.0 / self.n_nodes() as f64))
    }

    /// Global minimizer: closed form for least squares (via the eigensystem
    /// of the averaged normal matrix), full-gradient descent to gradient norm
    /// 1e-12 for logistic.
    pub fn minimizer(&self) -> Result<Matrix> {
        match self.kind {
            LossKind::Quadratic => {
                let (normal, rhs) = self.normal_system()?;
                let eig = sym_eigen(&normal)?;
                let lead = eig.values[0];
                let floor = SINGULAR_REL_TOL * lead.max(1.0);
                if eig.values.iter().any(|&v| v <= floor) {
                    return Err(Error::invalid(
                        "least-squares problem is singular; add a regularizer for a unique minimizer",
                    ));
                }
                // X* = V diag(1/lambda) V^T rhs.
                let proj = eig.vectors.t_mul(&rhs)?;
                let scaled = {
                    let mut s = proj.clone();
                    for r in 0..s.rows() {
                        for c in 0..s.cols() {
                            s.set(r, c, s.get(r, c) / eig.values[r]);
                        }
                    }
                    s
                };
                eig.vectors.mul(&scaled)
            }
            LossKind::Logistic => {
                let step = 1.0 / self.smoothness_bound();
                let mut x = Matrix::zeros(self.state_rows, self.state_cols);
                for _ in 0..MINIMIZER_MAX_ITERS {
                    let g = self.global_gradient(&x)?;
                    if g.frob_norm() <= MINIMIZER_GRAD_TOL {
                        return Ok(x);
                    }
                    x.add_scaled_in_place(&g, -step);
                }
                Err(Error::invalid(
                    "logistic minimizer did not reach the gradient tolerance; \
                     the problem is too ill-conditioned for the iteration budget",
                ))
            }
        }
    }

    /// Averaged normal matrix mean_i(A_i^T A_i / m_i) + reg I and right-hand
    /// side mean_i(A_i^T B_i / m_i) of the global least-squares system.
    fn normal_system(&self) -> Result<(Matrix, Matrix)> {
        let n = self.n_nodes() as f64;
        let mut normal = Matrix::zeros(self.state_rows, self.state_rows);
        let mut rhs = Matrix::zeros(self.state_rows, self.state_cols);
        for node in &self.nodes {
            let m = node.samples() as f64;
            normal.add_scaled_in_place(&node.features.t_mul(&node.features)?, 1.0 / (n * m));
            rhs.add_scaled_in_place(&node.features.t_mul(&node.targets)?, 1.0 / (n * m));
        }
        for k in 0..self.state_rows {
            normal.set(k, k, normal.get(k, k) + self.regularizer);
        }
        Ok((normal, rhs))
    }

    /// Upper bound on the global smoothness constant. Exact for least
    /// squares; for logistic it uses the 1/4 curvature cap of the logit.
    pub fn smoothness_bound(&self) -> f64 {
        let curvature = match self.kind {
            LossKind::Quadratic => 1.0,
            LossKind::Logistic => 0.25,
        };
        let mut worst: f64 = 0.0;
        for node in &self.nodes {
            let gram = node
                .features
                .t_mul(&node.features)
                .expect("feature matrix is rectangular");
            let eig = sym_eigen(&gram).expect("gram matrix is symmetric");
            worst = worst.max(curvature * eig.values[0] / node.samples() as f64);
        }
        worst + self.regularizer
    }
}

/// Numerically stable log(1 + exp(t)).
fn log1p_exp(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Numerically stable 1 / (1 + exp(-t)).
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Where to probe the loss when estimating variance and heterogeneity:
/// `count` points of the form center + radius * G with standard normal G,
/// plus the center itself. The seed makes the probe set reproducible.
#[derive(Clone, Debug)]
pub struct ProbeRegion {
    pub center: Matrix,
    pub radius: f64,
    pub count: usize,
    pub seed: u64,
}

impl ProbeRegion {
    pub fn around(center: Matrix, radius: f64, count: usize, seed: u64) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::invalid(format!(
                "probe radius must be finite and non-negative, got {radius}"
            )));
        }
        Ok(ProbeRegion { center, radius, count, seed })
    }

    fn points(&self) -> Vec<Matrix> {
        let mut rng = RngStream::new(self.seed).derive("probe", 0);
        let mut pts = vec![self.center.clone()];
        for _ in 0..self.count {
            let mut p = self.center.clone();
            p.add_scaled_in_place(
                &rng.standard_normal_matrix(self.center.rows(), self.center.cols()),
                self.radius,
            );
            pts.push(p);
        }
        pts
    }
}

/// Problem constants as the analysis sees them: smoothness and strong
/// convexity (exact for least squares, curvature bounds for logistic), plus
/// empirical probe-maxima for the sampling variance and the cross-node
/// gradient spread. The empirical two are estimates over the probe region,
/// not proven bounds.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ConstantEstimates {
    pub smoothness: f64,
    pub strong_convexity: f64,
    pub gradient_variance: f64,
    pub heterogeneity: f64,
}

/// Estimates (L, mu, sigma^2, zeta^2) for a model. The variance term is the
/// single-row sampling variance, computed by exact enumeration at every probe
/// point; the heterogeneity term is the mean squared distance of node
/// gradients from the global gradient.
pub fn estimate_constants(model: &LossModel, probe: &ProbeRegion) -> Result<ConstantEstimates> {
    if probe.center.shape() != model.state_shape() {
        return Err(Error::ShapeMismatch {
            context: "probe region center".to_string(),
            expected: model.state_shape(),
            got: probe.center.shape(),
        });
    }
    let (smoothness, strong_convexity) = match model.kind() {
        LossKind::Quadratic => {
            let mut worst_hi: f64 = 0.0;
            let mut worst_lo = f64::INFINITY;
            for i in 0..model.n_nodes() {
                let node = model.node(i);
                let gram = node.features.t_mul(&node.features)?;
                let eig = sym_eigen(&gram)?;
                let m = node.samples() as f64;
                worst_hi = worst_hi.max(eig.values[0] / m);
                worst_lo = worst_lo.min(eig.values[eig.values.len() - 1].max(0.0) / m);
            }
            (worst_hi + model.regularizer(), worst_lo + model.regularizer())
        }
        // Logistic curvature lies in (0, 1/4]; only the regularizer gives a
        // uniform lower bound.
        LossKind::Logistic => (model.smoothness_bound(), model.regularizer()),
    };

    let mut gradient_variance: f64 = 0.0;
    let mut heterogeneity: f64 = 0.0;
    for x in probe.points() {
        let mut node_grads = Vec::with_capacity(model.n_nodes());
        for i in 0..model.n_nodes() {
            node_grads.push(model.gradient(i, &x)?);
        }
        let mean_grad = Matrix::mean_of(&node_grads)?;

        for (i, full) in node_grads.iter().enumerate() {
            // Exact single-row sampling variance by enumeration:
            // mean_r ||g_r - g||^2 over the node's rows.
            let data = model.node(i);
            let mut acc = 0.0;
            for r in 0..data.samples() {
                let g_r = model.gradient_over_rows(data, &x, Some(&[r]))?;
                acc += g_r.sub(full)?.frob_norm_sq();
            }
            gradient_variance = gradient_variance.max(acc / data.samples() as f64);
            heterogeneity = heterogeneity.max({
                let mut spread = 0.0;
                for g in &node_grads {
                    spread += g.sub(&mean_grad)?.frob_norm_sq();
                }
                spread / model.n_nodes() as f64
            });
        }
    }
    Ok(ConstantEstimates { smoothness, strong_convexity, gradient_variance, heterogeneity })
}

/// Stepsize schedule: a constant, or the classical c / (t + t0) decay with
/// the round index t counted from zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum StepSchedule {
    Constant { eta: f64 },
    Decay { c: f64, t0: f64 },
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSchedule::Constant { eta } => {
                if !(eta >= 0.0 && eta.is_finite()) {
                    return Err(Error::invalid(format!(
                        "constant stepsize must be finite and non-negative, got {eta}"
                    )));
                }
            }
            StepSchedule::Decay { c, t0 } => {
                if !(c > 0.0 && c.is_finite() && t0 > 0.0 && t0.is_finite()) {
                    return Err(Error::invalid(format!(
                        "decay schedule needs positive finite c and t0, got c={c}, t0={t0}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn eta(&self, round: u64) -> f64 {
        match *self {
            StepSchedule::Constant { eta } => eta,
            StepSchedule::Decay { c, t0 } => c / (t0 + round as f64),
        }
    }
}

/// How the power-iteration variant uses its several compression steps per
/// update: apply every step's approximation (the default), or only refine the
/// directions and apply the final approximation once.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ApplyMode {
    PerStep,
    RefineOnce,
}

/// The optimizer family to run.
#[derive(Clone, Debug)]
pub enum SgdVariant {
    Dpsgd,
    PowerGossip { rank: usize, steps_per_update: usize, apply: ApplyMode },
    Theory { compressor: LinearProjectionCompressor },
}

/// Output-weight scheme for the final model draw: uniform over rounds,
/// proportional to the (1-based) round index, or exponential exp(rate * t).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum AlphaScheme {
    Uniform,
    Linear,
    Exponential { rate: f64 },
}

impl AlphaScheme {
    /// Weights for rounds 1..=T. The exponential scheme is shifted by the
    /// horizon so the largest weight is exp(0); proportionality is all that
    /// matters and the shift avoids overflow.
    pub fn weights(&self, rounds: u64) -> Vec<f64> {
        let t_max = rounds as f64;
        (1..=rounds)
            .map(|t| match *self {
                AlphaScheme::Uniform => 1.0,
                AlphaScheme::Linear => t as f64,
                AlphaScheme::Exponential { rate } => (rate * (t as f64 - t_max)).exp(),
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct SgdConfig {
    pub schedule: StepSchedule,
    pub rounds: u64,
    pub batch: usize,
    pub variant: SgdVariant,
    pub alpha: AlphaScheme,
}

/// One optimization metrics row. `round` counts optimizer updates, each of
/// which may span several communication rounds.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MetricsRow {
    pub round: u64,
    pub bits_per_node: f64,
    pub obj_gap: f64,
    pub grad_norm_sq: f64,
    pub consensus_error: f64,
}

/// One decentralized SGD update: gossip the full pre-round states and apply
/// stochastic gradients evaluated at the pre-round states.
pub fn dpsgd_step(
    net: &mut GossipNetwork,
    model: &LossModel,
    eta: f64,
    batch: usize,
) -> Result<()> {
    let grads = local_gradients(net, model, batch)?;
    net.exact_gossip_round()?;
    for (i, g) in grads.iter().enumerate() {
        net.add_scaled_to_node(i, g, -eta)?;
    }
    Ok(())
}

/// One power-iteration SGD update: `steps` compressed difference-gossip
/// rounds plus a gradient step, with the gradients evaluated at the pre-step
/// states so that gossip and gradient read the same snapshot.
pub fn powergossip_sgd_step(
    net: &mut GossipNetwork,
    model: &LossModel,
    eta: f64,
    batch: usize,
    edge_states: &mut [EdgeState],
    steps: usize,
    apply: ApplyMode,
) -> Result<()> {
    if steps == 0 {
        return Err(Error::invalid("steps per update must be at least 1"));
    }
    let grads = local_gradients(net, model, batch)?;
    match apply {
        ApplyMode::PerStep => {
            for _ in 0..steps {
                net.powergossip_round(edge_states)?;
            }
        }
        ApplyMode::RefineOnce => {
            net.powergossip_refine_once(edge_states, steps)?;
        }
    }
    for (i, g) in grads.iter().enumerate() {
        net.add_scaled_to_node(i, g, -eta)?;
    }
    Ok(())
}

/// One sequential update: each node first takes its local gradient step, then
/// a single projected-difference consensus round runs on the results.
pub fn theory_sgd_step(
    net: &mut GossipNetwork,
    model: &LossModel,
    eta: f64,
    batch: usize,
    compressor: &LinearProjectionCompressor,
) -> Result<()> {
    let grads = local_gradients(net, model, batch)?;
    let mut intermediate = net.states();
    for (y, g) in intermediate.iter_mut().zip(&grads) {
        y.add_scaled_in_place(g, -eta);
    }
    net.overwrite_states(intermediate)?;
    net.compressed_consensus_round(compressor)?;
    Ok(())
}

/// Stochastic gradients for every node at the current states, each drawn from
/// the node's own stream.
fn local_gradients(net: &mut GossipNetwork, model: &LossModel, batch: usize) -> Result<Vec<Matrix>> {
    if model.n_nodes() != net.n() {
        return Err(Error::invalid(format!(
            "model with {} nodes driven on a {}-node network",
            model.n_nodes(),
            net.n()
        )));
    }
    let mut grads = Vec::with_capacity(net.n());
    for i in 0..net.n() {
        let x = net.state(i).clone();
        let g = {
            let rng = net.node_rng_mut(i);
            model.stochastic_gradient(i, &x, batch, rng)?
        };
        grads.push(g);
    }
    Ok(grads)
}

/// Draws one history index with probability proportional to its weight and
/// returns that round's entry. Weights must be non-negative, finite, and not
/// all zero.
pub fn select_output<'a>(
    history: &'a [Matrix],
    alphas: &[f64],
    rng: &mut RngStream,
) -> Result<(usize, &'a Matrix)> {
    if history.is_empty() {
        return Err(Error::invalid("output selection over an empty history"));
    }
    if history.len() != alphas.len() {
        return Err(Error::invalid(format!(
            "{} weights for {} history entries",
            alphas.len(),
            history.len()
        )));
    }
    let mut total = 0.0;
    for &a in alphas {
        if !(a >= 0.0 && a.is_finite()) {
            return Err(Error::invalid(format!(
                "output weights must be finite and non-negative, got {a}"
            )));
        }
        total += a;
    }
    if total <= 0.0 {
        return Err(Error::invalid("output weights must not all be zero"));
    }
    let u = rng.uniform() * total;
    let mut acc = 0.0;
    for (t, &a) in alphas.iter().enumerate() {
        acc += a;
        if u < acc {
            return Ok((t, &history[t]));
        }
    }
    // Rounding can leave u at the very top of the range; take the last
    // positive-weight entry.
    let last = alphas
        .iter()
        .rposition(|&a| a > 0.0)
        .expect("total weight is positive");
    Ok((last, &history[last]))
}

/// A fully resolved optimization experiment.
#[derive(Clone, Debug)]
pub struct OptimizeRun {
    pub mixing: MixingMatrix,
    pub model: LossModel,
    pub initial: Vec<Matrix>,
    pub sgd: SgdConfig,
    pub accounting: Accounting,
    pub seed: u64,
}

/// Everything an optimization run produces: per-round metrics, the drawn
/// output model with its round index, and the reference optimum used for the
/// objective-gap column.
#[derive(Clone, Debug)]
pub struct OptimizeOutcome {
    pub rows: Vec<MetricsRow>,
    pub mean_history: Vec<Matrix>,
    pub selected_round: u64,
    pub output: Matrix,
    pub output_gap: f64,
    pub optimum_value: f64,
}

/// Runs an optimization experiment for its configured number of updates and
/// draws the output model. Deterministic given the seed.
pub fn run_optimize(cfg: &OptimizeRun) -> Result<OptimizeOutcome> {
    cfg.sgd.schedule.validate()?;
    if cfg.sgd.rounds == 0 {
        return Err(Error::invalid("an optimization run needs at least one round"));
    }
    if cfg.sgd.batch == 0 || cfg.sgd.batch > cfg.model.min_samples() {
        return Err(Error::invalid(format!(
            "minibatch size {} must lie in 1..={}",
            cfg.sgd.batch,
            cfg.model.min_samples()
        )));
    }
    if let SgdVariant::Theory { compressor } = &cfg.sgd.variant {
        let (p, q) = cfg.model.state_shape();
        compressor.validate(p, q)?;
    }

    let x_star = cfg.model.minimizer()?;
    let optimum_value = cfg.model.global_value(&x_star)?;

    let mut net = GossipNetwork::new(
        cfg.initial.clone(),
        cfg.mixing.clone(),
        cfg.accounting,
        cfg.seed,
    )?;
    if net.shape() != cfg.model.state_shape() {
        return Err(Error::ShapeMismatch {
            context: "initial optimizer states".to_string(),
            expected: cfg.model.state_shape(),
            got: net.shape(),
        });
    }
    let mut edge_states = match &cfg.sgd.variant {
        SgdVariant::PowerGossip { rank, .. } => Some(init_edge_states(
            net.mixing(),
            net.shape().1,
            *rank,
            cfg.seed,
        )?),
        _ => None,
    };

    let mut rows = Vec::with_capacity(cfg.sgd.rounds as usize + 1);
    let mut mean_history = Vec::with_capacity(cfg.sgd.rounds as usize);
    rows.push(metrics_row(&net, &cfg.model, optimum_value, 0)?);
    for t in 0..cfg.sgd.rounds {
        let eta = cfg.sgd.schedule.eta(t);
        match &cfg.sgd.variant {
            SgdVariant::Dpsgd => dpsgd_step(&mut net, &cfg.model, eta, cfg.sgd.batch)?,
            SgdVariant::PowerGossip { steps_per_update, apply, .. } => powergossip_sgd_step(
                &mut net,
                &cfg.model,
                eta,
                cfg.sgd.batch,
                edge_states.as_mut().expect("edge states were initialized"),
                *steps_per_update,
                *apply,
            )?,
            SgdVariant::Theory { compressor } => {
                theory_sgd_step(&mut net, &cfg.model, eta, cfg.sgd.batch, compressor)?
            }
        }
        rows.push(metrics_row(&net, &cfg.model, optimum_value, t + 1)?);
        mean_history.push(net.mean_state());
    }

    let alphas = cfg.sgd.alpha.weights(cfg.sgd.rounds);
    let mut out_rng = RngStream::new(cfg.seed).derive("output", 0);
    let (idx, output) = select_output(&mean_history, &alphas, &mut out_rng)?;
    let output = output.clone();
    let output_gap = cfg.model.global_value(&output)? - optimum_value;
    Ok(OptimizeOutcome {
        rows,
        mean_history,
        selected_round: idx as u64 + 1,
        output,
        output_gap,
        optimum_value,
    })
}

fn metrics_row(
    net: &GossipNetwork,
    model: &LossModel,
    optimum_value: f64,
    round: u64,
) -> Result<MetricsRow> {
    let mean = net.mean_state();
    let obj_gap = model.global_value(&mean)? - optimum_value;
    let grad_norm_sq = model.global_gradient(&mean)?.frob_norm_sq();
    let mut consensus = 0.0;
    for i in 0..net.n() {
        consensus += net.state(i).sub(&mean)?.frob_norm_sq();
    }
    Ok(MetricsRow {
        round,
        bits_per_node: net.bits_per_node(),
        obj_gap,
        grad_norm_sq,
        consensus_error: consensus / net.n() as f64,
    })
}
