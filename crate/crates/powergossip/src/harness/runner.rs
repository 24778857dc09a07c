//! Experiment execution: dispatches a parsed config, collects metrics, and
//! writes the CSV plus a JSON sidecar describing the run.
//!
//! Output paths are taken as given when absolute; relative paths are resolved
//! against `POWERGOSSIP_OUT_DIR` when that variable is set. The sidecar sits
//! next to the CSV with the extension `run.json` and echoes the validated
//! config, so any run can be reproduced from its artifacts alone.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

use crate::compressors::compression_ratio;
use crate::error::{Error, Result};
use crate::harness::config::{
    CompressorFamily, ConsensusConfig, ExperimentConfig, ExperimentKind, OptimizeConfig,
    RatioConfig, SpectrumConfig, VariantName,
};
use crate::harness::data::{build_loss_model, generate_node_data, initial_states};
use crate::numerics::{singular_spectrum, Matrix, RngStream};
use crate::optimization::{
    estimate_constants, run_optimize, AlphaScheme, ApplyMode, MetricsRow, OptimizeRun, SgdConfig,
    SgdVariant, StepSchedule,
};
use crate::harness::config::{AlphaConfig, EtaConfig};
use crate::protocols::{ConsensusMetrics, ConsensusRun, ProtocolKind};

pub const OUT_DIR_ENV: &str = "POWERGOSSIP_OUT_DIR";

/// Constants the run derived from its inputs; `None` where a field does not
/// apply to the experiment type.
#[derive(Clone, Debug, Default, Serialize)]
pub struct DerivedConstants {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectral_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compression_delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smoothness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strong_convexity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gradient_variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heterogeneity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimum_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_round: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_gap: Option<f64>,
}

/// The metrics a run produced, by experiment type.
#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunRows {
    Consensus { rows: Vec<ConsensusMetrics> },
    Optimize { rows: Vec<MetricsRow> },
    Spectrum { singular_values: Vec<f64> },
    Ratio { value: f64 },
}

/// Everything a run leaves behind: the validated config echo, derived
/// constants, the metrics, and the wall time. Wall time is informational and
/// not covered by determinism guarantees.
#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    pub config: Value,
    pub derived: DerivedConstants,
    pub rows: RunRows,
    pub wall_time_s: f64,
}

impl RunRecord {
    /// Renders this record's metrics in the CSV format of its experiment
    /// type.
    pub fn csv(&self) -> String {
        match &self.rows {
            RunRows::Consensus { rows } => consensus_csv(rows),
            RunRows::Optimize { rows } => optimize_csv(rows),
            RunRows::Spectrum { singular_values } => spectrum_csv(singular_values),
            RunRows::Ratio { value } => {
                let (p, q, rank, iters) = (
                    self.config["p"].as_u64().unwrap_or(0),
                    self.config["q"].as_u64().unwrap_or(0),
                    self.config["rank"].as_u64().unwrap_or(1),
                    self.config["iters"].as_u64().unwrap_or(1),
                );
                format!("p,q,rank,iters,ratio\n{p},{q},{rank},{iters},{value}\n")
            }
        }
    }
}

pub fn consensus_csv(rows: &[ConsensusMetrics]) -> String {
    let mut out = String::from("round,bits_per_node,error\n");
    for r in rows {
        out.push_str(&format!("{},{:.16e},{:.16e}\n", r.round, r.bits_per_node, r.error));
    }
    out
}

pub fn optimize_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("round,bits_per_node,obj_gap,grad_norm_sq,consensus_error\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            r.round, r.bits_per_node, r.obj_gap, r.grad_norm_sq, r.consensus_error
        ));
    }
    out
}

pub fn spectrum_csv(values: &[f64]) -> String {
    let mut out = String::from("index,sigma\n");
    for (i, v) in values.iter().enumerate() {
        out.push_str(&format!("{},{:.16e}\n", i + 1, v));
    }
    out
}

/// Resolves a configured output path: absolute paths pass through, relative
/// ones land in `POWERGOSSIP_OUT_DIR` when it is set.
pub fn resolve_output_path(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) => PathBuf::from(dir).join(path),
        None => path.to_path_buf(),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Writes the CSV and its sidecar for a finished run; `target` is the raw
/// configured path.
pub fn write_outputs(record: &RunRecord, target: &Path) -> Result<PathBuf> {
    let csv_path = resolve_output_path(target);
    write_file(&csv_path, &record.csv())?;
    let sidecar = csv_path.with_extension("run.json");
    let json = serde_json::to_string_pretty(record)?;
    write_file(&sidecar, &(json + "\n"))?;
    Ok(csv_path)
}

/// Runs one experiment. Metrics are returned in the record; the CSV and
/// sidecar are written only when the config names an output.
pub fn run(config: &ExperimentConfig) -> Result<RunRecord> {
    let started = Instant::now();
    let (derived, rows, output) = match config.kind() {
        ExperimentKind::Consensus(c) => {
            let (derived, rows) = run_consensus_config(c)?;
            (derived, RunRows::Consensus { rows }, c.output.clone())
        }
        ExperimentKind::Optimize(c) => {
            let (derived, rows) = run_optimize_config(c)?;
            (derived, RunRows::Optimize { rows }, c.output.clone())
        }
        ExperimentKind::Spectrum(c) => {
            let values = run_spectrum_config(c)?;
            (
                DerivedConstants::default(),
                RunRows::Spectrum { singular_values: values },
                c.output.clone(),
            )
        }
        ExperimentKind::Ratio(c) => {
            let value = run_ratio_config(c)?;
            (DerivedConstants::default(), RunRows::Ratio { value }, c.output.clone())
        }
    };
    let record = RunRecord {
        config: config.echo().clone(),
        derived,
        rows,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    if let Some(target) = output {
        write_outputs(&record, &target)?;
    }
    Ok(record)
}

fn run_consensus_config(c: &ConsensusConfig) -> Result<(DerivedConstants, Vec<ConsensusMetrics>)> {
    c.validate_protocol()?;
    let mixing = c.topology.build()?;
    let data_rng = RngStream::new(c.seed).derive("data", 0);
    let initial = generate_node_data(&c.data, mixing.n(), &data_rng)?;
    let (rows_dim, cols_dim) = initial[0].shape();

    let mut derived = DerivedConstants {
        spectral_gap: Some(mixing.spectral_gap()),
        ..DerivedConstants::default()
    };
    let protocol = match &c.compressor {
        None => ProtocolKind::Exact,
        Some(comp) => match comp.family() {
            CompressorFamily::Projection(family) => {
                family.validate(rows_dim, cols_dim)?;
                derived.compression_delta = Some(family.delta(rows_dim, cols_dim)?);
                ProtocolKind::Compressed(family)
            }
            CompressorFamily::Power { rank, iters_per_update } => ProtocolKind::PowerGossip {
                rank,
                steps_per_round: iters_per_update,
            },
            CompressorFamily::Baseline(b) => ProtocolKind::Choco {
                compressor: b,
                gamma: c.gamma.expect("validate_protocol checked gamma"),
            },
        },
    };
    let run = ConsensusRun {
        mixing,
        initial,
        protocol,
        stop: c.stop.to_rule(),
        accounting: c.accounting.build()?,
        seed: c.seed,
    };
    let rows = crate::protocols::run_consensus(&run)?;
    Ok((derived, rows))
}

fn run_optimize_config(c: &OptimizeConfig) -> Result<(DerivedConstants, Vec<MetricsRow>)> {
    let mixing = c.topology.build()?;
    let root = RngStream::new(c.seed);
    let model = build_loss_model(&c.loss, mixing.n(), &root)?;
    let shape = model.state_shape();
    let initial = initial_states(c.init, mixing.n(), shape, &root);

    let schedule = match c.sgd.eta {
        EtaConfig::Constant(eta) => StepSchedule::Constant { eta },
        EtaConfig::Decay { c, t0 } => StepSchedule::Decay { c, t0 },
    };
    let alpha = match c.sgd.alpha {
        AlphaConfig::Uniform => AlphaScheme::Uniform,
        AlphaConfig::Linear => AlphaScheme::Linear,
        AlphaConfig::Exponential { rate } => AlphaScheme::Exponential { rate },
    };
    let apply = if c.sgd.refine_once {
        ApplyMode::RefineOnce
    } else {
        ApplyMode::PerStep
    };

    let mut derived = DerivedConstants {
        spectral_gap: Some(mixing.spectral_gap()),
        ..DerivedConstants::default()
    };
    let variant = match (c.sgd.variant, &c.compressor) {
        (VariantName::Dpsgd, None) => SgdVariant::Dpsgd,
        (VariantName::Dpsgd, Some(_)) => {
            return Err(Error::config(
                "the dpsgd variant communicates full matrices; remove the compressor",
            ))
        }
        (VariantName::Powergossip, Some(comp)) => match comp.family() {
            CompressorFamily::Power { rank, iters_per_update } => SgdVariant::PowerGossip {
                rank,
                steps_per_update: iters_per_update,
                apply,
            },
            _ => {
                return Err(Error::config(
                    "the powergossip variant needs a compressor of kind `power`",
                ))
            }
        },
        (VariantName::Powergossip, None) => {
            return Err(Error::config(
                "the powergossip variant needs a compressor of kind `power`",
            ))
        }
        (VariantName::Theory, Some(comp)) => match comp.family() {
            CompressorFamily::Projection(family) => {
                family.validate(shape.0, shape.1)?;
                derived.compression_delta = Some(family.delta(shape.0, shape.1)?);
                SgdVariant::Theory { compressor: family }
            }
            _ => {
                return Err(Error::config(
                    "the theory variant needs a linear projection compressor \
                     (identity, random_entry, random_right, or random_left)",
                ))
            }
        },
        (VariantName::Theory, None) => {
            return Err(Error::config(
                "the theory variant needs a linear projection compressor",
            ))
        }
    };
    if c.sgd.refine_once && !matches!(variant, SgdVariant::PowerGossip { .. }) {
        return Err(Error::config(
            "`refine_once` only applies to the powergossip variant",
        ));
    }

    let run = OptimizeRun {
        mixing,
        model,
        initial,
        sgd: SgdConfig {
            schedule,
            rounds: c.sgd.rounds,
            batch: c.sgd.batch,
            variant,
            alpha,
        },
        accounting: c.accounting.build()?,
        seed: c.seed,
    };
    let outcome = run_optimize(&run)?;

    let probe = crate::optimization::ProbeRegion::around(
        Matrix::zeros(shape.0, shape.1),
        1.0,
        3,
        c.seed,
    )?;
    let constants = estimate_constants(&run.model, &probe)?;
    derived.smoothness = Some(constants.smoothness);
    derived.strong_convexity = Some(constants.strong_convexity);
    derived.gradient_variance = Some(constants.gradient_variance);
    derived.heterogeneity = Some(constants.heterogeneity);
    derived.optimum_value = Some(outcome.optimum_value);
    derived.selected_round = Some(outcome.selected_round);
    derived.output_gap = Some(outcome.output_gap);
    Ok((derived, outcome.rows))
}

fn run_spectrum_config(c: &SpectrumConfig) -> Result<Vec<f64>> {
    let matrix = Matrix::read_text(&c.input)?;
    singular_spectrum(&matrix)
}

fn run_ratio_config(c: &RatioConfig) -> Result<f64> {
    compression_ratio(c.p, c.q, c.rank, c.iters)
}
