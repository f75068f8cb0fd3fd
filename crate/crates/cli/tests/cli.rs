use std::path::Path;
use std::process::{Command, Output};

use noisy_mpo::{StateSnapshot, VectorizedDensityState};
use serde_json::Value;

fn noisy_mpo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noisy-mpo")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn manifest(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

fn data_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn minimal_config_is_filled_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "mode = \"circuit\"\n[circuit]\nn = 4\np = 0.1\n");
    let out = noisy_mpo(&["--config", &cfg, "--print-config"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for line in ["realizations = 100", "delta_err = 0.000001", "depth = 30", "noise = \"depolarizing\""] {
        assert!(text.contains(line), "missing {line:?} in\n{text}");
    }
}

#[test]
fn out_of_range_rate_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "mode = \"circuit\"\n[circuit]\nn = 4\np = 1.5\n");
    let out = noisy_mpo(&["--config", &cfg]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error[config]") && err.contains("circuit.p") && err.contains("[0, 1]"), "{err}");
}

#[test]
fn exit_codes_by_error_class() {
    assert_eq!(noisy_mpo(&["--mode", "bogus"]).status.code(), Some(2));
    assert_eq!(noisy_mpo(&["--config", "/nonexistent/run.toml"]).status.code(), Some(5));
    assert_eq!(noisy_mpo(&["--mode", "circuit"]).status.code(), Some(3));
}

#[test]
fn canonical_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "mode = \"lindblad\"\nseed = 4\n[lindblad]\nn = [4, 6]\nnoise = \"amplitude-damping\"\nsingle_step = [0.5]\n",
    );
    let first = noisy_mpo(&["--config", &cfg, "--print-config"]);
    assert!(first.status.success());
    let again = write_config(dir.path(), std::str::from_utf8(&first.stdout).unwrap());
    let second = noisy_mpo(&["--config", &again, "--print-config"]);
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn single_qubit_steady_purity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("mode = \"single-qubit\"\n[single_qubit]\neta = {}\nt_end = 40.0\n", 2f64.sqrt()));
    let out_dir = dir.path().join("out");
    assert!(noisy_mpo(&["--config", &cfg, "--out", out_dir.to_str().unwrap()]).status.success());
    let results = &manifest(&out_dir)["children"][0]["results"];
    assert!((results["steady_purity"].as_f64().unwrap() - 7.0 / 8.0).abs() < 1e-12);
    // By t = 40 the closed form has relaxed onto it.
    assert!((results["final_purity"].as_f64().unwrap() - 7.0 / 8.0).abs() < 1e-6);
}

#[test]
fn pure_noise_full_depolarization() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "mode = \"pure-noise\"\nrealizations = 1\n[circuit]\nn = 4\np = 0.75\ndepth = 3\n");
    let out_dir = dir.path().join("out");
    assert!(noisy_mpo(&["--config", &cfg, "--out", out_dir.to_str().unwrap()]).status.success());
    let rows = data_rows(&out_dir.join("child-000/norm.csv"));
    assert_eq!(rows[0][0].parse::<f64>().unwrap(), 1.0);
    assert!((rows[0][1].parse::<f64>().unwrap() + 0.5).abs() < 1e-12);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "mode = \"circuit\"\nrealizations = 3\nseed = 11\n[circuit]\nn = 4\np = [0.05, 0.1]\ndepth = 6\nsingle_step = [2]\naudit = true\n",
    );
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = noisy_mpo(&["--config", &cfg, "--out", out.to_str().unwrap(), "--workers", "2"]).status;
        assert!(status.success());
        out
    };
    let (a, b) = (run("a"), run("b"));
    let (ma, mb) = (manifest(&a), manifest(&b));
    let files: Vec<&str> = ma["children"].as_array().unwrap().iter().flat_map(|c| c["files"].as_array().unwrap()).map(|f| f.as_str().unwrap()).collect();
    assert!(files.iter().any(|f| f.ends_with("errors.csv")) && files.iter().any(|f| f.ends_with("single-step-2.csv")));
    for f in files {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let strip = |mut m: Value| {
        m.as_object_mut().unwrap().remove("runtime_seconds");
        m.as_object_mut().unwrap().remove("timestamp_unix");
        m["config"].as_object_mut().unwrap().remove("out");
        m
    };
    assert_eq!(strip(ma), strip(mb));
}

#[test]
fn state_dump_restores_a_unit_trace_state() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "mode = \"circuit\"\nrealizations = 1\n[circuit]\nn = 5\np = 0.05\ndepth = 4\nl1 = false\n");
    let out_dir = dir.path().join("out");
    assert!(noisy_mpo(&["--config", &cfg, "--out", out_dir.to_str().unwrap(), "--dump-state"]).status.success());
    let snap: StateSnapshot = serde_json::from_str(&std::fs::read_to_string(out_dir.join("child-000/state.json")).unwrap()).unwrap();
    let state = VectorizedDensityState::from_snapshot(&snap).unwrap();
    assert_eq!(state.n(), 5);
    assert!((state.trace().re - 1.0).abs() < 1e-10);
}

#[test]
fn fit_mode_reports_rate_coefficient() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "mode = \"fit\"\nrealizations = 2\n[circuit]\nn = 4\np = [0.1, 0.2]\ndepth = 20\n");
    let out_dir = dir.path().join("out");
    assert!(noisy_mpo(&["--config", &cfg, "--out", out_dir.to_str().unwrap()]).status.success());
    let m = manifest(&out_dir);
    assert!(m["aggregate"]["gamma_vs_rate"]["4"]["c"].as_f64().unwrap() > 0.0);
    assert_eq!(m["children"].as_array().unwrap().len(), 2);
}
