//! End-to-end tests that drive the compiled binary the way a user would:
//! write a JSON config, run a verb, inspect the emitted file.

use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_perturbdyn"))
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_vec_pretty(value).unwrap()).unwrap();
    path
}

fn run_ok(args: &[&str]) -> Output {
    let output = bin().args(args).output().expect("spawning CLI");
    assert!(
        output.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn transmon_section(control: Value) -> Value {
    json!({
        "params": { "nu": 5.0, "alpha": -0.33, "beta": -0.015, "r": 0.02, "dim": 5 },
        "mu": 5.0,
        "control": control,
    })
}

/// Cheap fixed-step method for tests where only structure matters.
fn coarse_rk4() -> Value {
    json!({ "method": "rk4", "dt": 0.05 })
}

fn compute_terms_label_count(order: usize, channels: Option<Value>) -> Value {
    let mut cfg = json!({
        "transmon": transmon_section(json!({ "constant": { "re": 1.0, "im": 0.0 } })),
        "t_span": [0.0, 0.5],
        "expansion": "magnus",
        "order": order,
        "method": coarse_rk4(),
    });
    if let Some(channels) = channels {
        cfg["channels"] = channels;
    }
    cfg
}

#[test]
fn compute_terms_first_order_has_one_label_per_channel() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", &compute_terms_label_count(1, None));
    let out = dir.path().join("out.json");
    run_ok(&["compute-terms", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);

    let doc: Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(doc["result"]["label_count"], 6);
    assert_eq!(doc["result"]["terms"]["labels"].as_array().unwrap().len(), 6);
    // the output embeds provenance
    assert!(doc["version"].is_string());
    assert_eq!(doc["seed"], 0);
    assert_eq!(doc["config"]["expansion"], "magnus");
}

#[test]
fn compute_terms_second_order_label_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", &compute_terms_label_count(2, None));
    let out = dir.path().join("out.json");
    run_ok(&["compute-terms", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);

    let doc: Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    // C(6+2, 2) - 1 = 27
    assert_eq!(doc["result"]["label_count"], 27);
}

#[test]
fn compute_terms_without_channels_returns_frame_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg =
        write_config(dir.path(), "cfg.json", &compute_terms_label_count(2, Some(json!([]))));
    let out = dir.path().join("out.json");
    run_ok(&["compute-terms", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);

    let doc: Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(doc["result"]["label_count"], 0);
    assert!(doc["result"]["terms"]["labels"].as_array().unwrap().is_empty());
    let frame = doc["result"]["terms"]["frame_solution"].as_array().unwrap();
    assert_eq!(frame.len(), 5);
    assert_eq!(frame[0].as_array().unwrap().len(), 5);
}

#[test]
fn compute_terms_rejects_unknown_keys_without_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut bad = compute_terms_label_count(1, None);
    bad["tspan_typo"] = json!([0.0, 1.0]);
    let cfg = write_config(dir.path(), "cfg.json", &bad);
    let out = dir.path().join("out.json");
    let output = bin()
        .args(["compute-terms", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("tspan_typo"));
    assert!(!out.exists(), "no partial output on schema failure");
}

#[test]
fn compute_terms_requires_exactly_one_of_order_or_labels() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = compute_terms_label_count(1, None);
    cfg["labels"] = json!([[0], [0, 0]]);
    let path = write_config(dir.path(), "cfg.json", &cfg);
    let output = bin().args(["compute-terms", "--config", path.to_str().unwrap()]).output().unwrap();
    assert!(!output.status.success());
}

fn fidelity_scan_config() -> Value {
    json!({
        "transmon": transmon_section(json!({ "smooth_random": { "scale": 2.0 } })),
        "t_span": [0.0, 2.0],
        "axes": [2],
        "scan_values": [0.0, 1e-4],
        "orders": [1, 2],
    })
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn fidelity_scan_is_exact_at_center_and_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", &fidelity_scan_config());
    let out_a = dir.path().join("a.csv");
    let out_b = dir.path().join("b.csv");
    let out_c = dir.path().join("c.csv");
    let cfg_s = cfg.to_str().unwrap();
    run_ok(&["fidelity-scan", "--config", cfg_s, "--out", out_a.to_str().unwrap(), "--seed", "3"]);
    run_ok(&["fidelity-scan", "--config", cfg_s, "--out", out_b.to_str().unwrap(), "--seed", "3"]);
    run_ok(&["fidelity-scan", "--config", cfg_s, "--out", out_c.to_str().unwrap(), "--seed", "4"]);

    let a = std::fs::read_to_string(&out_a).unwrap();
    let b = std::fs::read_to_string(&out_b).unwrap();
    let c = std::fs::read_to_string(&out_c).unwrap();
    assert_eq!(a, b, "same seed must reproduce the CSV byte for byte");
    assert_ne!(a, c, "different seeds draw different random controls");

    let rows = csv_rows(&a);
    let header = &rows[0];
    assert_eq!(header[0], "axis");
    let err1 = header.iter().position(|h| h == "abs_error_order1").unwrap();
    let err2 = header.iter().position(|h| h == "abs_error_order2").unwrap();
    let center = rows.iter().skip(1).find(|r| r[1].parse::<f64>().unwrap() == 0.0).unwrap();
    assert!(center[err1].parse::<f64>().unwrap() <= 1e-10);
    assert!(center[err2].parse::<f64>().unwrap() <= 1e-10);
}

#[test]
fn solver_sweep_rabi_distance_improves_with_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        &json!({
            "problem": { "rabi": { "nu": 5.0, "r": 0.02, "envelope_amp": 1.0, "t_final": 10.0 } },
            "modes": ["dyson"],
            "expansion_orders": [1, 2, 3],
            "chebyshev_orders": [0],
            "step_counts": [400],
        }),
    );
    let out = dir.path().join("out.csv");
    run_ok(&[
        "solver-sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--parallel",
    ]);

    let rows = csv_rows(&std::fs::read_to_string(&out).unwrap());
    let header = &rows[0];
    let dist_col = header.iter().position(|h| h == "distance").unwrap();
    let distances: Vec<f64> =
        rows.iter().skip(1).map(|r| r[dist_col].parse().unwrap()).collect();
    assert_eq!(distances.len(), 3);
    assert!(distances[1] < distances[0]);
    assert!(distances[2] < distances[1]);
    assert!(distances[2] < 1e-6);
}

#[test]
fn robustness_order_two_moments_scale_with_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let base = json!({
        "transmon": transmon_section(json!({ "constant": { "re": 1.0, "im": 0.0 } })),
        "t_span": [0.0, 1.0],
        "order": 1,
        "channels": [0],
        "sigmas": [0.01],
        "bounds": [0.05],
        "method": { "method": "rk4", "dt": 0.002 },
    });
    let mut doubled = base.clone();
    doubled["sigmas"] = json!([0.02]);
    doubled["bounds"] = json!([0.1]);

    let g_of = |cfg: &Value, name: &str| -> f64 {
        let path = write_config(dir.path(), name, cfg);
        let out = dir.path().join(format!("{name}.out"));
        run_ok(&[
            "robustness",
            "--config",
            path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        let doc: Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
        doc["result"]["g"].as_f64().unwrap()
    };

    let g1 = g_of(&base, "base.json");
    let g2 = g_of(&doubled, "doubled.json");
    assert!(g1.abs() > 1e-12, "objective should be nontrivial, got {g1}");
    // only order-2 monomials survive a first-order expansion, and doubling
    // sigma (with the bound held at the same multiple of sigma) multiplies
    // every order-2 moment by exactly 4
    assert!((g2 / g1 - 4.0).abs() < 1e-6, "g2/g1 = {}", g2 / g1);
}

#[test]
fn missing_config_file_fails_cleanly() {
    let output = bin().args(["compute-terms", "--config", "/nonexistent/cfg.json"]).output().unwrap();
    assert!(!output.status.success());
    assert!(!String::from_utf8_lossy(&output.stderr).is_empty());
}
