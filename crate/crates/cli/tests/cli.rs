use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn spincat(args: &[&str], root: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_spincat"));
    cmd.args(args).env_remove("SPINCAT_OUTPUT_ROOT");
    if let Some(r) = root {
        cmd.env("SPINCAT_OUTPUT_ROOT", r);
    }
    cmd.output().unwrap()
}

fn error_json(out: &Output) -> Value {
    serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap()
}

fn header(path: &Path) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    text.lines().next().unwrap().split(',').map(String::from).collect()
}

#[test]
fn fig3_preset_writes_schema_valid_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fig3");
    let run = spincat(&["preset", "fig3", "--out", out.to_str().unwrap(), "--tau-end", "2"], None);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));

    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["params"]["rabi"], 40.0);
    assert_eq!(manifest["config"]["params"]["coupling"], 0.03);
    assert!(manifest["health"]["max_norm_drift"].as_f64().unwrap() < 1e-8);
    for f in manifest["files"].as_array().unwrap() {
        assert!(out.join(f.as_str().unwrap()).exists(), "{f}");
    }

    assert_eq!(header(&out.join("density_00000.csv")), ["z", "p_total", "p_up", "p_down"]);
    assert!(out.join("density_00002.csv").exists());
    assert_eq!(header(&out.join("cat_series.csv"))[..3], ["tau", "n_peaks", "separation"]);
    assert_eq!(header(&out.join("trajectory.csv"))[..2], ["tau", "mean_z"]);
    let rows = fs::read_to_string(out.join("trajectory.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 26);

    // N = 2000 records are 64012 bytes after a 16-byte header.
    let len = fs::metadata(out.join("amplitudes.bin")).unwrap().len();
    assert_eq!(len, 16 + 3 * 64012);

    let replay = spincat(
        &[
            "replay",
            out.join("amplitudes.bin").to_str().unwrap(),
            "--analyze",
            "--grid",
            "-30,30,1201",
            "--out",
            tmp.path().join("r").to_str().unwrap(),
        ],
        None,
    );
    assert!(replay.status.success(), "{}", String::from_utf8_lossy(&replay.stderr));
    let line: Value = serde_json::from_slice(&replay.stdout).unwrap();
    assert_eq!(line["records"], 3);
    assert!(tmp.path().join("r/cat_series.csv").exists());
}

#[test]
fn fig2_preset_writes_seven_column_classical_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fig2");
    let run = spincat(&["preset", "fig2", "--out", out.to_str().unwrap(), "--tau-end", "3"], None);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(header(&out.join("classical.csv")), ["tau", "z", "p", "energy", "s_x", "s_y", "s_z"]);
    let text = fs::read_to_string(out.join("classical.csv")).unwrap();
    let first: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|c| c.parse().unwrap()).collect();
    assert_eq!(first, [0.0, 6.7e4, 6.7e4, 6.7e4 * 6.7e4, 0.0, 0.0, 0.5]);
    assert!(out.join("plot_classical.py").exists());
}

#[test]
fn sweep_writes_children_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("sweep.toml");
    fs::write(
        &config,
        "preset = \"fig3\"\n[params]\nbasis_size = 600\n[run]\ntau_end = 1.0\noutput = \"sweep\"\nstream = false\n\
         [sweep]\nparameter = \"coupling\"\nvalues = [0.01, 0.03, 0.1]\n",
    )
    .unwrap();
    let run = spincat(&["sweep", config.to_str().unwrap()], Some(tmp.path()));
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let dir = tmp.path().join("sweep");
    for v in ["0.01", "0.03", "0.1"] {
        assert!(dir.join(format!("coupling_{v}")).join("manifest.json").exists(), "{v}");
    }
    let summary = fs::read_to_string(dir.join("sweep_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
}

#[test]
fn output_root_override_applies_to_relative_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let run = spincat(&["preset", "fig4", "--out", "rel", "--dry-run"], Some(tmp.path()));
    assert!(run.status.success());
    let text = fs::read_to_string(tmp.path().join("rel/config.toml")).unwrap();
    assert!(text.contains("rabi = 400.0"));
}

#[test]
fn config_errors_exit_2_with_json() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "preset = \"fig3\"\n[run]\ntau_end = -5.0\n").unwrap();
    let out = spincat(&["run", bad.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    let e = error_json(&out);
    assert_eq!(e["kind"], "config");
    assert!(e["message"].as_str().unwrap().contains("line 3"));

    let out = spincat(&["preset", "fig9", "--out", tmp.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["exit_code"], 2);
}

#[test]
fn numerical_failures_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("small.toml");
    fs::write(&config, "preset = \"fig3\"\n[params]\nbasis_size = 100\n[run]\ntau_end = 1.0\n").unwrap();
    let out = spincat(&["run", config.to_str().unwrap()], Some(tmp.path()));
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["kind"], "numerical");
}

#[test]
fn io_failures_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    let out = spincat(&["run", tmp.path().join("missing.toml").to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(4));
    let junk = tmp.path().join("junk.bin");
    fs::write(&junk, b"definitely not a stream").unwrap();
    let out = spincat(&["replay", junk.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(4));
    assert!(error_json(&out)["message"].as_str().unwrap().contains("magic"));
}
