//! End-to-end checks of the `powergossip` binary: verb dispatch, exit codes,
//! seed overrides, and the stdout CSV mode used when a config names no output
//! file.

use std::path::Path;
use std::process::{Command, Output};

use powergossip::harness::OUT_DIR_ENV;
use powergossip::numerics::{singular_spectrum, Matrix, RngStream};

const CODE_CONFIG: i32 = 2;
const CODE_NUMERIC: i32 = 3;
const CODE_IO: i32 = 4;

/// Runs the binary with the given arguments, sandboxing outputs under `dir`.
fn run_cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_powergossip"))
        .args(args)
        .env(OUT_DIR_ENV, dir)
        .env("RAYON_NUM_THREADS", "1")
        .output()
        .expect("spawned the powergossip binary")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).expect("wrote a config file");
    path.display().to_string()
}

fn stdout_of(output: &Output) -> String {
    assert!(
        output.status.success(),
        "expected success, got {:?}: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8(output.stdout.clone()).expect("stdout is UTF-8")
}

fn assert_exit(output: &Output, expected: i32) {
    assert_eq!(
        output.status.code(),
        Some(expected),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
}

const CONSENSUS_CONFIG: &str = r#"{
    "kind": "consensus",
    "seed": 11,
    "topology": {"kind": "ring", "n": 8, "neighbor_weight": 0.3},
    "compressor": {"kind": "power", "rank": 1},
    "data": {"kind": "gaussian", "p": 6, "q": 6},
    "stop": {"error_target": 1e-3, "max_rounds": 2000}
}"#;

#[test]
fn ratio_prints_the_floats_saved_factor() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = write_config(
        dir.path(),
        "ratio.json",
        r#"{"kind": "ratio", "p": 64, "q": 576, "rank": 1, "iters": 1}"#,
    );
    let output = run_cli(dir.path(), &["ratio", "--config", &config]);
    assert_eq!(stdout_of(&output).trim(), "115.2");
}

#[test]
fn stdout_csv_runs_are_deterministic_and_seed_sensitive() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = write_config(dir.path(), "consensus.json", CONSENSUS_CONFIG);

    let base = stdout_of(&run_cli(dir.path(), &["consensus", "--config", &config]));
    let again = stdout_of(&run_cli(dir.path(), &["consensus", "--config", &config]));
    assert_eq!(base, again, "same config, same bytes");
    assert!(base.starts_with("round,bits_per_node,error\n"));
    assert!(base.lines().count() > 2, "run recorded several rounds");

    // --seed equal to the config's seed changes nothing; a new seed does.
    let same = stdout_of(&run_cli(
        dir.path(),
        &["consensus", "--config", &config, "--seed", "11"],
    ));
    assert_eq!(base, same);
    let reseeded = stdout_of(&run_cli(
        dir.path(),
        &["consensus", "--config", &config, "--seed", "12"],
    ));
    assert_ne!(base, reseeded, "a different seed draws different data");
}

#[test]
fn stdout_csv_matches_the_written_file() {
    let dir = tempfile::tempdir().expect("tempdir");
    let plain = write_config(dir.path(), "plain.json", CONSENSUS_CONFIG);
    let with_output = write_config(
        dir.path(),
        "with_output.json",
        &CONSENSUS_CONFIG.replace(
            "\"stop\"",
            "\"output\": \"trace.csv\",\n    \"stop\"",
        ),
    );

    let streamed = stdout_of(&run_cli(dir.path(), &["consensus", "--config", &plain]));
    let filed = run_cli(dir.path(), &["consensus", "--config", &with_output]);
    assert!(filed.status.success());
    let written = std::fs::read_to_string(dir.path().join("trace.csv")).expect("trace.csv");
    assert_eq!(streamed, written, "stdout mode and file mode emit the same CSV");
}

#[test]
fn verbs_reject_configs_of_another_kind() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = write_config(dir.path(), "consensus.json", CONSENSUS_CONFIG);
    let output = run_cli(dir.path(), &["optimize", "--config", &config]);
    assert_exit(&output, CODE_CONFIG);
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("consensus") && stderr.contains("optimize"), "stderr: {stderr}");
}

#[test]
fn unknown_config_fields_are_rejected() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = write_config(
        dir.path(),
        "typo.json",
        &CONSENSUS_CONFIG.replace("\"stop\"", "\"halting\""),
    );
    let output = run_cli(dir.path(), &["consensus", "--config", &config]);
    assert_exit(&output, CODE_CONFIG);
}

#[test]
fn missing_files_are_io_errors() {
    let dir = tempfile::tempdir().expect("tempdir");
    let absent = dir.path().join("absent.json").display().to_string();
    let output = run_cli(dir.path(), &["consensus", "--config", &absent]);
    assert_exit(&output, CODE_IO);

    // A spectrum config naming a matrix file that does not exist fails the
    // same way, after the config itself parses fine.
    let config = write_config(
        dir.path(),
        "spectrum.json",
        &format!(
            r#"{{"kind": "spectrum", "input": "{}"}}"#,
            dir.path().join("no_matrix.txt").display()
        ),
    );
    let output = run_cli(dir.path(), &["spectrum", "--config", &config]);
    assert_exit(&output, CODE_IO);
}

#[test]
fn usage_errors_exit_with_the_config_code() {
    let dir = tempfile::tempdir().expect("tempdir");
    assert_exit(&run_cli(dir.path(), &[]), CODE_CONFIG);
    assert_exit(&run_cli(dir.path(), &["consensus"]), CODE_CONFIG);
    assert_exit(&run_cli(dir.path(), &["transmogrify", "--config", "x"]), CODE_CONFIG);
}

#[test]
fn divergent_stepsizes_violate_the_finiteness_invariant() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = write_config(
        dir.path(),
        "runaway.json",
        r#"{
            "kind": "optimize",
            "seed": 5,
            "topology": {"kind": "ring", "n": 4, "neighbor_weight": 0.3},
            "loss": {"kind": "quadratic", "p": 4, "q": 2, "rows_per_node": 6,
                     "noise": 0.0, "heterogeneity": 0.1, "mu_reg": 0.1},
            "sgd": {"eta": 1e12, "rounds": 400, "batch": 6, "variant": "dpsgd"}
        }"#,
    );
    let output = run_cli(dir.path(), &["optimize", "--config", &config]);
    assert_exit(&output, CODE_NUMERIC);
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("non-finite"), "stderr: {stderr}");
}

#[test]
fn spectrum_reports_the_singular_values_of_a_saved_matrix() {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut rng = RngStream::new(17).derive("cells", 0);
    let matrix = rng.standard_normal_matrix(5, 3);
    let matrix_path = dir.path().join("m.txt");
    matrix.write_text(&matrix_path).expect("wrote the matrix");

    let config = write_config(
        dir.path(),
        "spectrum.json",
        &format!(
            r#"{{"kind": "spectrum", "input": "{}"}}"#,
            matrix_path.display()
        ),
    );
    let stdout = stdout_of(&run_cli(dir.path(), &["spectrum", "--config", &config]));
    let mut lines = stdout.lines();
    assert_eq!(lines.next(), Some("index,sigma"));
    let reported: Vec<f64> = lines
        .map(|line| line.split(',').nth(1).expect("sigma column").parse().expect("a float"))
        .collect();
    let expected = singular_spectrum(&matrix).expect("spectrum of a small matrix");
    assert_eq!(reported.len(), expected.len());
    for (got, want) in reported.iter().zip(&expected) {
        assert!((got - want).abs() <= 1e-12 * expected[0].max(1.0), "{got} vs {want}");
    }
}

#[test]
fn sweeps_print_a_summary_and_mark_the_best_point() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = write_config(dir.path(), "base.json", CONSENSUS_CONFIG);
    let grid = write_config(
        dir.path(),
        "grid.json",
        r#"{"topology.neighbor_weight": [0.2, 0.3, 0.4]}"#,
    );
    let output = run_cli(
        dir.path(),
        &["sweep", "--config", &config, "--grid", &grid],
    );
    let stdout = stdout_of(&output);
    let mut lines = stdout.lines();
    assert_eq!(
        lines.next(),
        Some("point,topology.neighbor_weight,seed,rounds,bits_per_node,final_metric,best")
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    let best_flags: Vec<&str> = rows
        .iter()
        .map(|row| row.rsplit(',').next().expect("best column"))
        .collect();
    assert_eq!(best_flags.iter().filter(|f| **f == "1").count(), 1);

    // A malformed grid (non-array axis) is a config error.
    let bad_grid = write_config(dir.path(), "bad_grid.json", r#"{"topology.neighbor_weight": 0.2}"#);
    let output = run_cli(
        dir.path(),
        &["sweep", "--config", &config, "--grid", &bad_grid],
    );
    assert_exit(&output, CODE_CONFIG);
}
