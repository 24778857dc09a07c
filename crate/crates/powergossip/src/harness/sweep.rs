//! Parameter sweeps: a base config plus a grid of dotted-path overrides,
//! expanded into one deterministic run per grid point.
//!
//! The grid is a JSON object mapping dotted config paths to arrays of
//! values, e.g. `{"gamma": [0.1, 0.2], "stop.max_rounds": [100]}`. Points are
//! enumerated in key-sorted order with the last key varying fastest, so the
//! point indices, and with them the derived per-point seeds, are stable.
//! Points may run on worker threads; results are reassembled in point order,
//! so all output is independent of the thread count.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::runner::{run, RunRecord, RunRows};
use crate::numerics::RngStream;

/// One executed grid point.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub index: usize,
    pub overrides: BTreeMap<String, Value>,
    pub seed: u64,
    pub record: RunRecord,
}

/// All results of a sweep plus the rendered summary.
#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub points: Vec<SweepPoint>,
    pub best_index: usize,
    pub summary_csv: String,
}

/// Sets `value` at a dotted path inside `root`. Every intermediate segment
/// must already be an object; only the leaf may be new (the config parser
/// then decides whether the key is legal).
fn set_dotted(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut current = root;
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(Error::config(format!("grid key `{path}` has an empty segment")));
    }
    for (i, segment) in segments.iter().enumerate() {
        let obj = current.as_object_mut().ok_or_else(|| {
            Error::config(format!(
                "grid key `{path}`: `{}` is not an object",
                segments[..i].join(".")
            ))
        })?;
        if i + 1 == segments.len() {
            obj.insert((*segment).to_string(), value);
            return Ok(());
        }
        current = obj.get_mut(*segment).ok_or_else(|| {
            Error::config(format!(
                "grid key `{path}`: config has no `{}` section",
                segments[..=i].join(".")
            ))
        })?;
    }
    unreachable!("loop returns on the leaf segment");
}

/// Parses and validates a grid object into key-sorted (path, values) pairs.
fn grid_axes(grid: &Value) -> Result<Vec<(String, Vec<Value>)>> {
    let obj = grid
        .as_object()
        .ok_or_else(|| Error::config("grid must be a JSON object of path -> array"))?;
    let mut axes: Vec<(String, Vec<Value>)> = Vec::with_capacity(obj.len());
    let sorted: BTreeMap<&String, &Value> = obj.iter().collect();
    for (key, values) in sorted {
        let arr = values.as_array().ok_or_else(|| {
            Error::config(format!("grid key `{key}` must map to an array of values"))
        })?;
        if arr.is_empty() {
            return Err(Error::config(format!("grid key `{key}` has no values")));
        }
        axes.push((key.clone(), arr.clone()));
    }
    Ok(axes)
}

/// Runs the full cross product of a grid against a base config.
///
/// Every point gets a seed derived from the base seed and its index, and,
/// when the base config names an output file, a numbered variant of that
/// file plus its sidecar. The summary CSV (written next to the base output
/// as `<stem>_summary.csv`) has one row per point and flags the point with
/// the smallest final error (consensus) or objective gap (optimize). With an
/// empty grid the base config runs unchanged as the single point.
pub fn run_sweep(base: &ExperimentConfig, grid: &Value) -> Result<SweepOutcome> {
    let axes = grid_axes(grid)?;
    let base_output = base
        .echo()
        .get("output")
        .and_then(Value::as_str)
        .map(PathBuf::from);

    // Materialize every point config up front so validation errors surface
    // before any work runs.
    let mut points: Vec<(usize, BTreeMap<String, Value>, u64, ExperimentConfig)> = Vec::new();
    if axes.is_empty() {
        points.push((0, BTreeMap::new(), base.seed(), base.clone()));
    } else {
        let total: usize = axes.iter().map(|(_, v)| v.len()).product();
        let seed_root = RngStream::new(base.seed());
        for index in 0..total {
            let mut remainder = index;
            let mut overrides = BTreeMap::new();
            // Last axis varies fastest.
            for (key, values) in axes.iter().rev() {
                let pick = remainder % values.len();
                remainder /= values.len();
                overrides.insert(key.clone(), values[pick].clone());
            }
            let seed = seed_root.derive("sweep", index as u64).next_u64();
            let mut raw = base.echo().clone();
            for (key, value) in &overrides {
                set_dotted(&mut raw, key, value.clone())?;
            }
            raw.as_object_mut()
                .ok_or_else(|| Error::config("config must be a JSON object"))?
                .insert("seed".to_string(), Value::from(seed));
            if let Some(path) = &base_output {
                let point_path = point_output_path(path, index);
                raw["output"] = Value::from(point_path.to_string_lossy().into_owned());
            }
            let cfg = ExperimentConfig::from_value(raw)
                .map_err(|e| Error::config(format!("grid point {index}: {e}")))?;
            points.push((index, overrides, seed, cfg));
        }
    }

    let records: Vec<RunRecord> = points
        .par_iter()
        .map(|(_, _, _, cfg)| run(cfg))
        .collect::<Result<_>>()?;

    let points: Vec<SweepPoint> = points
        .into_iter()
        .zip(records)
        .map(|((index, overrides, seed, _), record)| SweepPoint { index, overrides, seed, record })
        .collect();

    let mut best_index = 0;
    let mut best_metric = f64::INFINITY;
    for point in &points {
        let metric = final_metric(&point.record)?;
        if metric < best_metric {
            best_metric = metric;
            best_index = point.index;
        }
    }

    let keys: Vec<&String> = axes.iter().map(|(k, _)| k).collect();
    let mut summary = String::from("point");
    for key in &keys {
        summary.push(',');
        summary.push_str(key);
    }
    summary.push_str(",seed,rounds,bits_per_node,final_metric,best\n");
    for point in &points {
        summary.push_str(&point.index.to_string());
        for key in &keys {
            summary.push(',');
            summary.push_str(&compact_value(&point.overrides[*key]));
        }
        let (rounds, bits) = final_rounds_and_bits(&point.record);
        summary.push_str(&format!(
            ",{},{},{:.16e},{:.16e},{}\n",
            point.seed,
            rounds,
            bits,
            final_metric(&point.record)?,
            u8::from(point.index == best_index)
        ));
    }

    if let Some(path) = &base_output {
        let summary_path = summary_output_path(path);
        let resolved = crate::harness::runner::resolve_output_path(&summary_path);
        std::fs::create_dir_all(resolved.parent().unwrap_or(Path::new(".")))
            .map_err(|e| Error::io(resolved.display().to_string(), e))?;
        std::fs::write(&resolved, &summary)
            .map_err(|e| Error::io(resolved.display().to_string(), e))?;
    }

    Ok(SweepOutcome { points, best_index, summary_csv: summary })
}

/// The metric the summary ranks points by: final consensus error or final
/// objective gap.
fn final_metric(record: &RunRecord) -> Result<f64> {
    match &record.rows {
        RunRows::Consensus { rows } => Ok(rows.last().map(|r| r.error).unwrap_or(f64::INFINITY)),
        RunRows::Optimize { rows } => Ok(rows.last().map(|r| r.obj_gap).unwrap_or(f64::INFINITY)),
        _ => Err(Error::config(
            "sweeps are only defined for consensus and optimize configs",
        )),
    }
}

fn final_rounds_and_bits(record: &RunRecord) -> (u64, f64) {
    match &record.rows {
        RunRows::Consensus { rows } => rows
            .last()
            .map(|r| (r.round, r.bits_per_node))
            .unwrap_or((0, 0.0)),
        RunRows::Optimize { rows } => rows
            .last()
            .map(|r| (r.round, r.bits_per_node))
            .unwrap_or((0, 0.0)),
        _ => (0, 0.0),
    }
}

/// Renders an override value for the summary CSV: bare scalars, JSON for
/// anything structured.
fn compact_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// `runs.csv` -> `runs_point003.csv`.
fn point_output_path(base: &Path, index: usize) -> PathBuf {
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
    let ext = base.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    base.with_file_name(format!("{stem}_point{index:03}.{ext}"))
}

/// `runs.csv` -> `runs_summary.csv`.
fn summary_output_path(base: &Path) -> PathBuf {
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
    let ext = base.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    base.with_file_name(format!("{stem}_summary.{ext}"))
}
