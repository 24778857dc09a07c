//! JSON experiment configs.
//!
//! Every config is an object with a `kind` field selecting the experiment
//! type, and so are the nested topology / compressor / data objects. Unknown
//! keys are rejected at every level so that typos fail loudly instead of
//! silently running defaults. Tagged objects are dispatched by hand (read
//! `kind`, then parse the matching struct) because serde's internally tagged
//! enums cannot enforce unknown-key rejection.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::Error as DeError;
use serde::{Deserialize, Deserializer};
use serde_json::Value;

use crate::compressors::{BaselineCompressor, LinearProjectionCompressor};
use crate::error::{Error, Result};
use crate::protocols::{Accounting, StopRule};
use crate::topology::MixingMatrix;

fn kind_of<E: DeError>(v: &Value, what: &str) -> std::result::Result<String, E> {
    match v.get("kind").and_then(Value::as_str) {
        Some(k) => Ok(k.to_string()),
        None => Err(E::custom(format!("{what} must be an object with a string `kind` field"))),
    }
}

fn parse_as<T: serde::de::DeserializeOwned, E: DeError>(
    v: Value,
    what: &str,
) -> std::result::Result<T, E> {
    serde_json::from_value(v).map_err(|e| E::custom(format!("{what}: {e}")))
}

/// Communication graph selector.
#[derive(Clone, Debug, PartialEq)]
pub enum TopologyConfig {
    Ring { n: usize, neighbor_weight: f64 },
    Complete { n: usize },
}

impl TopologyConfig {
    pub fn n(&self) -> usize {
        match *self {
            TopologyConfig::Ring { n, .. } | TopologyConfig::Complete { n } => n,
        }
    }

    pub fn build(&self) -> Result<MixingMatrix> {
        match *self {
            TopologyConfig::Ring { n, neighbor_weight } => MixingMatrix::ring(n, neighbor_weight),
            TopologyConfig::Complete { n } => MixingMatrix::complete(n),
        }
    }
}

impl<'de> Deserialize<'de> for TopologyConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        match kind_of::<D::Error>(&v, "topology")?.as_str() {
            "ring" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct Raw {
                    #[serde(rename = "kind")]
                    _kind: String,
                    n: usize,
                    neighbor_weight: f64,
                }
                let raw: Raw = parse_as(v, "ring topology")?;
                Ok(TopologyConfig::Ring { n: raw.n, neighbor_weight: raw.neighbor_weight })
            }
            "complete" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct Raw {
                    #[serde(rename = "kind")]
                    _kind: String,
                    n: usize,
                }
                let raw: Raw = parse_as(v, "complete topology")?;
                Ok(TopologyConfig::Complete { n: raw.n })
            }
            other => Err(D::Error::custom(format!("unknown topology kind `{other}`"))),
        }
    }
}

/// Compressor selector. The projection kinds drive difference gossip, the
/// power kind drives power-iteration gossip, and the remaining kinds are the
/// public-copy baselines.
#[derive(Clone, Debug, PartialEq)]
pub enum CompressorConfig {
    Identity,
    RandomEntry { p_keep: f64 },
    RandomRight { rank: usize },
    RandomLeft { rank: usize },
    Power { rank: usize, iters_per_update: usize },
    SignNorm,
    TopFraction { fraction: f64 },
    SvdRank1,
}

/// What a compressor config resolves to at run time.
#[derive(Clone, Debug)]
pub enum CompressorFamily {
    Projection(LinearProjectionCompressor),
    Power { rank: usize, iters_per_update: usize },
    Baseline(BaselineCompressor),
}

impl CompressorConfig {
    pub fn family(&self) -> CompressorFamily {
        match *self {
            CompressorConfig::Identity => {
                CompressorFamily::Projection(LinearProjectionCompressor::Identity)
            }
            CompressorConfig::RandomEntry { p_keep } => {
                CompressorFamily::Projection(LinearProjectionCompressor::RandomEntry { p_keep })
            }
            CompressorConfig::RandomRight { rank } => {
                CompressorFamily::Projection(LinearProjectionCompressor::RandomRight { rank })
            }
            CompressorConfig::RandomLeft { rank } => {
                CompressorFamily::Projection(LinearProjectionCompressor::RandomLeft { rank })
            }
            CompressorConfig::Power { rank, iters_per_update } => {
                CompressorFamily::Power { rank, iters_per_update }
            }
            CompressorConfig::SignNorm => CompressorFamily::Baseline(BaselineCompressor::SignNorm),
            CompressorConfig::TopFraction { fraction } => {
                CompressorFamily::Baseline(BaselineCompressor::TopFraction { fraction })
            }
            CompressorConfig::SvdRank1 => {
                CompressorFamily::Baseline(BaselineCompressor::SvdRank1)
            }
        }
    }

    /// The protocol this compressor implies.
    pub fn protocol_name(&self) -> &'static str {
        match self.family() {
            CompressorFamily::Projection(_) => "compressed",
            CompressorFamily::Power { .. } => "power",
            CompressorFamily::Baseline(_) => "choco",
        }
    }

    /// Analytic retained-information factor, where one exists for the given
    /// state shape.
    pub fn analytic_delta(&self, rows: usize, cols: usize) -> Option<f64> {
        match self.family() {
            CompressorFamily::Projection(f) => f.delta(rows, cols).ok(),
            _ => None,
        }
    }
}

impl<'de> Deserialize<'de> for CompressorConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        match kind_of::<D::Error>(&v, "compressor")?.as_str() {
            "identity" => {
                only_kind::<D::Error>(&v, "identity compressor")?;
                Ok(CompressorConfig::Identity)
            }
            "random_entry" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct Raw {
                    #[serde(rename = "kind")]
                    _kind: String,
                    p_keep: f64,
                }
                let raw: Raw = parse_as(v, "random_entry compressor")?;
                Ok(CompressorConfig::RandomEntry { p_keep: raw.p_keep })
            }
            "random_right" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct Raw {
                    #[serde(rename = "kind")]
                    _kind: String,
                    rank: usize,
                }
                let raw: Raw = parse_as(v, "random_right compressor")?;
                Ok(CompressorConfig::RandomRight { rank: raw.rank })
            }
            "random_left" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct Raw {
                    #[serde(rename = "kind")]
                    _kind: String,
                    rank: usize,
                }
                let raw: Raw = parse_as(v, "random_left compressor")?;
                Ok(CompressorConfig::RandomLeft { rank: raw.rank })
            }
            "power" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct Raw {
                    #[serde(rename = "kind")]
                    _kind: String,
                    rank: usize,
                    #[serde(default = "default_one")]
                    iters_per_update: usize,
                }
                let raw: Raw = parse_as(v, "power compressor")?;
                Ok(CompressorConfig::Power {
                    rank: raw.rank,
                    iters_per_update: raw.iters_per_update,
                })
            }
            "sign_norm" => {
                only_kind::<D::Error>(&v, "sign_norm compressor")?;
                Ok(CompressorConfig::SignNorm)
            }
            "top_fraction" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct Raw {
                    #[serde(rename = "kind")]
                    _kind: String,
                    fraction: f64,
                }
                let raw: Raw = parse_as(v, "top_fraction compressor")?;
                Ok(CompressorConfig::TopFraction { fraction: raw.fraction })
            }
            "svd_rank1" => {
                only_kind::<D::Error>(&v, "svd_rank1 compressor")?;
                Ok(CompressorConfig::SvdRank1)
            }
            other => Err(D::Error::custom(format!("unknown compressor kind `{other}`"))),
        }
    }
}

fn default_one() -> usize {
    1
}

/// Rejects any key besides `kind` on objects that take no parameters.
fn only_kind<E: DeError>(v: &Value, what: &str) -> std::result::Result<(), E> {
    let obj = v
        .as_object()
        .ok_or_else(|| E::custom(format!("{what} must be an object")))?;
    let extra: BTreeSet<&String> = obj.keys().filter(|k| k.as_str() != "kind").collect();
    if let Some(key) = extra.into_iter().next() {
        return Err(E::custom(format!("{what} takes no field `{key}`")));
    }
    Ok(())
}

/// Where the per-node matrices for a consensus run come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSourceConfig {
    Gaussian { p: usize, q: usize },
    Lowrank { p: usize, q: usize, rank: usize, noise: f64 },
    File { paths: Vec<PathBuf> },
}

impl<'de> Deserialize<'de> for DataSourceConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        match kind_of::<D::Error>(&v, "data source")?.as_str() {
            "gaussian" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct Raw {
                    #[serde(rename = "kind")]
                    _kind: String,
                    p: usize,
                    q: usize,
                }
                let raw: Raw = parse_as(v, "gaussian data source")?;
                Ok(DataSourceConfig::Gaussian { p: raw.p, q: raw.q })
            }
            "lowrank" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct Raw {
                    #[serde(rename = "kind")]
                    _kind: String,
                    p: usize,
                    q: usize,
                    rank: usize,
                    #[serde(default)]
                    noise: f64,
                }
                let raw: Raw = parse_as(v, "lowrank data source")?;
                Ok(DataSourceConfig::Lowrank {
                    p: raw.p,
                    q: raw.q,
                    rank: raw.rank,
                    noise: raw.noise,
                })
            }
            "file" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct Raw {
                    #[serde(rename = "kind")]
                    _kind: String,
                    paths: Vec<PathBuf>,
                }
                let raw: Raw = parse_as(v, "file data source")?;
                Ok(DataSourceConfig::File { paths: raw.paths })
            }
            other => Err(D::Error::custom(format!("unknown data source kind `{other}`"))),
        }
    }
}

/// Stop rule for consensus runs.
#[derive(Clone, Copy, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct StopConfig {
    pub error_target: f64,
    pub max_rounds: u64,
}

impl Default for StopConfig {
    fn default() -> Self {
        let rule = StopRule::default();
        StopConfig { error_target: rule.error_target, max_rounds: rule.max_rounds }
    }
}

impl StopConfig {
    pub fn to_rule(self) -> StopRule {
        StopRule { error_target: self.error_target, max_rounds: self.max_rounds }
    }
}

/// Wire accounting.
#[derive(Clone, Copy, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AccountingConfig {
    pub bits_per_float: u32,
}

impl Default for AccountingConfig {
    fn default() -> Self {
        AccountingConfig { bits_per_float: Accounting::default().bits_per_float }
    }
}

impl AccountingConfig {
    pub fn build(self) -> Result<Accounting> {
        Accounting::new(self.bits_per_float)
    }
}

/// A consensus experiment: initial matrices from a data source, one protocol
/// chosen by the compressor (none means exact gossip), run to the stop rule.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusConfig {
    #[serde(rename = "kind")]
    _kind: String,
    pub seed: u64,
    pub topology: TopologyConfig,
    #[serde(default)]
    pub compressor: Option<CompressorConfig>,
    /// Optional consistency check: when present it must name the protocol
    /// the compressor implies ("exact", "compressed", "power", "choco").
    #[serde(default)]
    pub protocol: Option<String>,
    /// Consensus stepsize for the public-copy protocol; required there,
    /// rejected elsewhere.
    #[serde(default)]
    pub gamma: Option<f64>,
    pub data: DataSourceConfig,
    #[serde(default)]
    pub stop: StopConfig,
    #[serde(default)]
    pub accounting: AccountingConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ConsensusConfig {
    /// Checks the compressor / protocol / gamma combination without building
    /// anything.
    pub fn validate_protocol(&self) -> Result<&'static str> {
        let implied = match &self.compressor {
            None => "exact",
            Some(c) => c.protocol_name(),
        };
        if let Some(requested) = &self.protocol {
            if requested != implied {
                return Err(Error::config(format!(
                    "protocol `{requested}` does not match the compressor, which implies `{implied}`"
                )));
            }
        }
        match (implied, self.gamma) {
            ("choco", None) => Err(Error::config(
                "the public-copy protocol needs a `gamma` consensus stepsize",
            )),
            ("choco", Some(_)) => Ok(implied),
            (_, Some(g)) => Err(Error::config(format!(
                "`gamma` = {g} is only meaningful for the public-copy protocol"
            ))),
            (_, None) => Ok(implied),
        }
    }
}

/// Loss family and synthetic data shape for optimization runs. Zero
/// heterogeneity replicates one dataset on every node; positive values mix in
/// per-node perturbations of that scale.
#[derive(Clone, Debug, PartialEq)]
pub enum LossConfig {
    Quadratic {
        p: usize,
        q: usize,
        rows_per_node: usize,
        noise: f64,
        heterogeneity: f64,
        mu_reg: f64,
    },
    Logistic {
        p: usize,
        rows_per_node: usize,
        label_noise: f64,
        heterogeneity: f64,
        mu_reg: f64,
    },
}

impl LossConfig {
    pub fn state_shape(&self) -> (usize, usize) {
        match *self {
            LossConfig::Quadratic { p, q, .. } => (p, q),
            LossConfig::Logistic { p, .. } => (p, 1),
        }
    }
}

impl<'de> Deserialize<'de> for LossConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        match kind_of::<D::Error>(&v, "loss")?.as_str() {
            "quadratic" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct Raw {
                    #[serde(rename = "kind")]
                    _kind: String,
                    p: usize,
                    q: usize,
                    rows_per_node: usize,
                    #[serde(default)]
                    noise: f64,
                    #[serde(default)]
                    heterogeneity: f64,
                    #[serde(default)]
                    mu_reg: f64,
                }
                let raw: Raw = parse_as(v, "quadratic loss")?;
                Ok(LossConfig::Quadratic {
                    p: raw.p,
                    q: raw.q,
                    rows_per_node: raw.rows_per_node,
                    noise: raw.noise,
                    heterogeneity: raw.heterogeneity,
                    mu_reg: raw.mu_reg,
                })
            }
            "logistic" => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct Raw {
                    #[serde(rename = "kind")]
                    _kind: String,
                    p: usize,
                    rows_per_node: usize,
                    #[serde(default)]
                    label_noise: f64,
                    #[serde(default)]
                    heterogeneity: f64,
                    #[serde(default)]
                    mu_reg: f64,
                }
                let raw: Raw = parse_as(v, "logistic loss")?;
                Ok(LossConfig::Logistic {
                    p: raw.p,
                    rows_per_node: raw.rows_per_node,
                    label_noise: raw.label_noise,
                    heterogeneity: raw.heterogeneity,
                    mu_reg: raw.mu_reg,
                })
            }
            other => Err(D::Error::custom(format!("unknown loss kind `{other}`"))),
        }
    }
}

/// Stepsize schedule: a bare number for a constant, or {"c": .., "t0": ..}
/// for c / (t + t0).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EtaConfig {
    Constant(f64),
    Decay { c: f64, t0: f64 },
}

impl<'de> Deserialize<'de> for EtaConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        match &v {
            Value::Number(x) => {
                let eta = x
                    .as_f64()
                    .ok_or_else(|| D::Error::custom("stepsize is not representable as f64"))?;
                Ok(EtaConfig::Constant(eta))
            }
            Value::Object(_) => {
                #[derive(Deserialize)]
                #[serde(deny_unknown_fields)]
                struct Raw {
                    c: f64,
                    t0: f64,
                }
                let raw: Raw = parse_as(v, "decaying stepsize")?;
                Ok(EtaConfig::Decay { c: raw.c, t0: raw.t0 })
            }
            _ => Err(D::Error::custom(
                "stepsize must be a number or an object with `c` and `t0`",
            )),
        }
    }
}

/// Output-weight scheme: "uniform", "linear", or
/// {"kind": "exponential", "rate": ..}.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum AlphaConfig {
    #[default]
    Uniform,
    Linear,
    Exponential {
        rate: f64,
    },
}

impl<'de> Deserialize<'de> for AlphaConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        match &v {
            Value::String(s) => match s.as_str() {
                "uniform" => Ok(AlphaConfig::Uniform),
                "linear" => Ok(AlphaConfig::Linear),
                other => Err(D::Error::custom(format!("unknown alpha scheme `{other}`"))),
            },
            Value::Object(_) => match kind_of::<D::Error>(&v, "alpha scheme")?.as_str() {
                "exponential" => {
                    #[derive(Deserialize)]
                    #[serde(deny_unknown_fields)]
                    struct Raw {
                        #[serde(rename = "kind")]
                        _kind: String,
                        rate: f64,
                    }
                    let raw: Raw = parse_as(v, "exponential alpha scheme")?;
                    Ok(AlphaConfig::Exponential { rate: raw.rate })
                }
                other => Err(D::Error::custom(format!("unknown alpha scheme `{other}`"))),
            },
            _ => Err(D::Error::custom(
                "alpha scheme must be a string or an object with a `kind`",
            )),
        }
    }
}

/// Optimizer family name.
#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    Dpsgd,
    Powergossip,
    Theory,
}

/// How the nodes start: all zeros, one shared random matrix, or independent
/// random matrices.
#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    Zero,
    SharedRandom,
    PerNodeRandom,
}

/// Optimizer section of an optimization config.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SgdJsonConfig {
    pub eta: EtaConfig,
    pub rounds: u64,
    pub batch: usize,
    pub variant: VariantName,
    #[serde(default)]
    pub alpha: AlphaConfig,
    /// Power-iteration variant only: refine directions for all inner steps
    /// and apply the approximation once, instead of applying every step.
    #[serde(default)]
    pub refine_once: bool,
}

/// A decentralized optimization experiment.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeConfig {
    #[serde(rename = "kind")]
    _kind: String,
    pub seed: u64,
    pub topology: TopologyConfig,
    #[serde(default)]
    pub compressor: Option<CompressorConfig>,
    pub loss: LossConfig,
    pub sgd: SgdJsonConfig,
    #[serde(default)]
    pub init: InitKind,
    #[serde(default)]
    pub accounting: AccountingConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

/// Singular-spectrum report of a matrix saved in the text format.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    #[serde(rename = "kind")]
    _kind: String,
    #[serde(default)]
    pub seed: u64,
    pub input: PathBuf,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

/// Floats-saved report for a power-compressed shape.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatioConfig {
    #[serde(rename = "kind")]
    _kind: String,
    #[serde(default)]
    pub seed: u64,
    pub p: usize,
    pub q: usize,
    #[serde(default = "default_one")]
    pub rank: usize,
    #[serde(default = "default_one")]
    pub iters: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

/// One of the four experiment types.
#[derive(Clone, Debug)]
pub enum ExperimentKind {
    Consensus(ConsensusConfig),
    Optimize(OptimizeConfig),
    Spectrum(SpectrumConfig),
    Ratio(RatioConfig),
}

/// A parsed experiment plus the raw JSON it came from. The raw value is
/// echoed into run records so a run can be reproduced from its sidecar.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    raw: Value,
    kind: ExperimentKind,
}

impl ExperimentConfig {
    pub fn from_value(raw: Value) -> Result<Self> {
        let kind_name = raw
            .get("kind")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::config("config must be an object with a string `kind` field"))?
            .to_string();
        let kind = match kind_name.as_str() {
            "consensus" => ExperimentKind::Consensus(parse_config(raw.clone())?),
            "optimize" => ExperimentKind::Optimize(parse_config(raw.clone())?),
            "spectrum" => ExperimentKind::Spectrum(parse_config(raw.clone())?),
            "ratio" => ExperimentKind::Ratio(parse_config(raw.clone())?),
            other => {
                return Err(Error::config(format!(
                    "unknown config kind `{other}` (expected consensus, optimize, spectrum, or ratio)"
                )))
            }
        };
        if let ExperimentKind::Consensus(c) = &kind {
            c.validate_protocol()?;
        }
        Ok(ExperimentConfig { raw, kind })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: Value = serde_json::from_str(text)?;
        Self::from_value(raw)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn kind(&self) -> &ExperimentKind {
        &self.kind
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            ExperimentKind::Consensus(_) => "consensus",
            ExperimentKind::Optimize(_) => "optimize",
            ExperimentKind::Spectrum(_) => "spectrum",
            ExperimentKind::Ratio(_) => "ratio",
        }
    }

    pub fn seed(&self) -> u64 {
        match &self.kind {
            ExperimentKind::Consensus(c) => c.seed,
            ExperimentKind::Optimize(c) => c.seed,
            ExperimentKind::Spectrum(c) => c.seed,
            ExperimentKind::Ratio(c) => c.seed,
        }
    }

    /// Rebuilds the config with another seed; the raw echo is updated too.
    pub fn with_seed(&self, seed: u64) -> Result<Self> {
        let mut raw = self.raw.clone();
        let obj = raw
            .as_object_mut()
            .ok_or_else(|| Error::config("config must be a JSON object"))?;
        obj.insert("seed".to_string(), Value::from(seed));
        Self::from_value(raw)
    }

    /// The validated JSON this config was parsed from.
    pub fn echo(&self) -> &Value {
        &self.raw
    }
}

fn parse_config<T: serde::de::DeserializeOwned>(raw: Value) -> Result<T> {
    serde_json::from_value(raw).map_err(|e| Error::config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn consensus_json() -> Value {
        serde_json::json!({
            "kind": "consensus",
            "seed": 7,
            "topology": {"kind": "ring", "n": 8, "neighbor_weight": 0.436},
            "compressor": {"kind": "power", "rank": 1},
            "data": {"kind": "gaussian", "p": 10, "q": 10}
        })
    }

    #[test]
    fn minimal_consensus_config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_value(consensus_json()).unwrap();
        assert_eq!(cfg.kind_name(), "consensus");
        assert_eq!(cfg.seed(), 7);
        let ExperimentKind::Consensus(c) = cfg.kind() else {
            panic!("wrong kind");
        };
        assert_eq!(c.stop, StopConfig::default());
        assert_eq!(c.accounting.bits_per_float, 32);
        assert_eq!(
            c.compressor,
            Some(CompressorConfig::Power { rank: 1, iters_per_update: 1 })
        );
        assert_eq!(c.validate_protocol().unwrap(), "power");
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        let mut top = consensus_json();
        top["surprise"] = Value::from(1);
        assert!(ExperimentConfig::from_value(top).is_err());

        let mut nested = consensus_json();
        nested["topology"]["extra"] = Value::from(1);
        assert!(ExperimentConfig::from_value(nested).is_err());

        let mut comp = consensus_json();
        comp["compressor"]["fraction"] = Value::from(0.5);
        assert!(ExperimentConfig::from_value(comp).is_err());

        let mut bare = consensus_json();
        bare["compressor"] = serde_json::json!({"kind": "identity", "rank": 1});
        assert!(ExperimentConfig::from_value(bare).is_err());

        let mut stop = consensus_json();
        stop["stop"] = serde_json::json!({"error_target": 1e-4, "rounds": 10});
        assert!(ExperimentConfig::from_value(stop).is_err());
    }

    #[test]
    fn unknown_kinds_are_rejected() {
        let mut bad = consensus_json();
        bad["kind"] = Value::from("gossip");
        assert!(ExperimentConfig::from_value(bad).is_err());

        let mut topo = consensus_json();
        topo["topology"] = serde_json::json!({"kind": "torus", "n": 9});
        assert!(ExperimentConfig::from_value(topo).is_err());

        let mut comp = consensus_json();
        comp["compressor"] = serde_json::json!({"kind": "fourier", "rank": 1});
        assert!(ExperimentConfig::from_value(comp).is_err());
    }

    #[test]
    fn protocol_consistency_is_enforced() {
        let mut mismatched = consensus_json();
        mismatched["protocol"] = Value::from("choco");
        assert!(ExperimentConfig::from_value(mismatched).is_err());

        let mut matched = consensus_json();
        matched["protocol"] = Value::from("power");
        assert!(ExperimentConfig::from_value(matched).is_ok());

        // The public-copy protocol needs gamma, others must not set it.
        let mut choco = consensus_json();
        choco["compressor"] = serde_json::json!({"kind": "sign_norm"});
        assert!(ExperimentConfig::from_value(choco.clone()).is_err());
        choco["gamma"] = Value::from(0.5);
        assert!(ExperimentConfig::from_value(choco).is_ok());

        let mut stray_gamma = consensus_json();
        stray_gamma["gamma"] = Value::from(0.5);
        assert!(ExperimentConfig::from_value(stray_gamma).is_err());

        // No compressor at all means exact gossip.
        let mut exact = consensus_json();
        exact.as_object_mut().unwrap().remove("compressor");
        let cfg = ExperimentConfig::from_value(exact).unwrap();
        let ExperimentKind::Consensus(c) = cfg.kind() else {
            panic!("wrong kind");
        };
        assert_eq!(c.validate_protocol().unwrap(), "exact");
    }

    #[test]
    fn optimize_config_round_trips() {
        let raw = serde_json::json!({
            "kind": "optimize",
            "seed": 3,
            "topology": {"kind": "complete", "n": 4},
            "compressor": {"kind": "power", "rank": 2, "iters_per_update": 3},
            "loss": {"kind": "quadratic", "p": 5, "q": 2, "rows_per_node": 6,
                     "noise": 0.1, "heterogeneity": 0.5, "mu_reg": 0.2},
            "sgd": {"eta": {"c": 1.0, "t0": 10.0}, "rounds": 50, "batch": 2,
                    "variant": "powergossip", "alpha": {"kind": "exponential", "rate": 0.1}},
            "init": "shared_random"
        });
        let cfg = ExperimentConfig::from_value(raw).unwrap();
        let ExperimentKind::Optimize(c) = cfg.kind() else {
            panic!("wrong kind");
        };
        assert_eq!(c.sgd.eta, EtaConfig::Decay { c: 1.0, t0: 10.0 });
        assert_eq!(c.sgd.variant, VariantName::Powergossip);
        assert_eq!(c.sgd.alpha, AlphaConfig::Exponential { rate: 0.1 });
        assert!(!c.sgd.refine_once);
        assert_eq!(c.init, InitKind::SharedRandom);
        assert_eq!(c.loss.state_shape(), (5, 2));

        // Constant stepsize as a bare number, defaults for the rest.
        let raw = serde_json::json!({
            "kind": "optimize",
            "seed": 3,
            "topology": {"kind": "complete", "n": 4},
            "loss": {"kind": "logistic", "p": 5, "rows_per_node": 6, "mu_reg": 0.1},
            "sgd": {"eta": 0.05, "rounds": 50, "batch": 2, "variant": "dpsgd"}
        });
        let cfg = ExperimentConfig::from_value(raw).unwrap();
        let ExperimentKind::Optimize(c) = cfg.kind() else {
            panic!("wrong kind");
        };
        assert_eq!(c.sgd.eta, EtaConfig::Constant(0.05));
        assert_eq!(c.sgd.alpha, AlphaConfig::Uniform);
        assert_eq!(c.init, InitKind::Zero);
        assert_eq!(c.loss.state_shape(), (5, 1));
    }

    #[test]
    fn seed_override_updates_the_echo() {
        let cfg = ExperimentConfig::from_value(consensus_json()).unwrap();
        let reseeded = cfg.with_seed(99).unwrap();
        assert_eq!(reseeded.seed(), 99);
        assert_eq!(reseeded.echo()["seed"], Value::from(99));
        // The original is untouched.
        assert_eq!(cfg.seed(), 7);
    }

    #[test]
    fn spectrum_and_ratio_configs_parse() {
        let spec = serde_json::json!({"kind": "spectrum", "input": "diff.mat"});
        let cfg = ExperimentConfig::from_value(spec).unwrap();
        assert_eq!(cfg.kind_name(), "spectrum");

        let ratio = serde_json::json!({"kind": "ratio", "p": 64, "q": 576});
        let cfg = ExperimentConfig::from_value(ratio).unwrap();
        let ExperimentKind::Ratio(r) = cfg.kind() else {
            panic!("wrong kind");
        };
        assert_eq!((r.rank, r.iters), (1, 1));
    }
}
