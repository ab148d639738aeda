use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sparsefault"));
    cmd.env_remove("SPARSEFAULT_OUT_DIR");
    cmd
}

fn run(out: &Path, args: &[&str]) -> Output {
    bin().arg("--out-dir").arg(out).args(args).output().unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path:?}: {e}"))).unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

/// Parses a signal CSV into its header and numeric rows.
fn table(path: PathBuf) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

const FAN_IN: &str = r#"{"nodes": 3, "edges": [[0, 2], [1, 2]], "ground_set": [0, 1], "output_set": [2]}"#;
const PARALLEL: &str =
    r#"{"nodes": 4, "edges": [[0, 2], [1, 3]], "ground_set": [0, 1], "output_set": [2, 3]}"#;

#[test]
fn analyze_fan_in() {
    let dir = TempDir::new().unwrap();
    let sys = write(&dir, "g.json", FAN_IN);
    let out = dir.path().join("out");
    let o = run(&out, &["analyze", "--system", &sys]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let a = json(out.join("analysis.json"));
    assert_eq!(a["spark"]["value"], 2);
    assert_eq!(a["k_max"], 0);
    assert_eq!(a["partial"], false);
    assert!(out.join("coherence_min.csv").exists());
}

#[test]
fn analyze_parallel_paths() {
    let dir = TempDir::new().unwrap();
    let sys = write(&dir, "g.json", PARALLEL);
    let out = dir.path().join("out");
    assert_eq!(run(&out, &["analyze", "--system", &sys]).status.code(), Some(0));
    let a = json(out.join("analysis.json"));
    assert_eq!(a["spark"]["value"], 3);
    assert_eq!(a["k_max"], 1);
}

#[test]
fn analyze_generated_instance_localizes_single_nodes() {
    let dir = TempDir::new().unwrap();
    let gen = dir.path().join("gen");
    let o = run(&gen, &["gen", "linear", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let sys = gen.join("system.json");
    let out = dir.path().join("out");
    let o = run(&out, &["analyze", "--system", sys.to_str().unwrap(), "--budget", "4", "--no-coherence"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let a = json(out.join("analysis.json"));
    assert_eq!(a["spark"]["value"], 3);
    assert_eq!(a["spark"]["is_lower_bound"], false);
    assert_eq!(a["verdict"], "single-node errors localizable");
}

#[test]
fn analyze_budget_is_partial() {
    let dir = TempDir::new().unwrap();
    let sys = write(&dir, "g.json", PARALLEL);
    let out = dir.path().join("out");
    let o = run(&out, &["analyze", "--system", &sys, "--budget", "1"]);
    assert_eq!(o.status.code(), Some(4));
    let a = json(out.join("analysis.json"));
    assert_eq!(a["partial"], true);
    assert_eq!(a["spark"]["is_lower_bound"], true);
    assert_eq!(json(out.join("manifest.json"))["exit_code"], 4);
}

#[test]
fn malformed_input_exits_with_input_error() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let bad = write(&dir, "bad.json", "{\"nodes\": 3, \"edges\": [[0, 7]]");
    let o = run(&out, &["analyze", "--system", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
    let missing = dir.path().join("nope.json");
    assert_eq!(run(&out, &["analyze", "--system", missing.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&out, &["analyze"]).status.code(), Some(2));
}

#[test]
fn lorenz_simulation_is_bounded_and_converges_under_step_halving() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&a, &["simulate", "--model", "lorenz", "--T", "2"]).status.code(), Some(0));
    assert_eq!(run(&b, &["simulate", "--model", "lorenz", "--T", "2", "--steps", "1600"]).status.code(), Some(0));
    let (header, coarse) = table(a.join("states.csv"));
    let (_, fine) = table(b.join("states.csv"));
    assert_eq!(header, ["t", "x_0", "x_1", "x_2"]);
    assert_eq!(coarse.len(), 801);
    assert_eq!(fine.len(), 1601);
    let mut diff = 0.0f64;
    for (k, row) in coarse.iter().enumerate() {
        assert!(row[1..].iter().all(|v| v.is_finite() && v.abs() < 1e3), "row {k}");
        let other = &fine[2 * k];
        assert_eq!(row[0], other[0]);
        for c in 1..4 {
            diff = diff.max((row[c] - other[c]).abs());
        }
    }
    assert!(diff < 1e-4, "step halving moved the trajectory by {diff}");
    let (outputs, _) = table(a.join("outputs.csv"));
    assert_eq!(outputs, ["t", "y_0", "y_2"]);
}

const DECAY: &str = r#"{"a": [[-1.0, 0.0], [1.0, -2.0]], "x0": [1.0, 0.5], "sensors": [1], "ground_set": [0, 1]}"#;

#[test]
fn zero_input_gives_closed_system_outputs() {
    let dir = TempDir::new().unwrap();
    let sys = write(&dir, "m.json", DECAY);
    let out = dir.path().join("out");
    assert_eq!(run(&out, &["simulate", "--system", &sys, "--horizon", "1", "--steps", "400"]).status.code(), Some(0));
    let (_, rows) = table(out.join("outputs.csv"));
    // x0' = -x0, x1' = x0 - 2 x1 with x(0) = (1, 1/2): x1 = e^-t - e^-2t / 2
    for row in rows {
        let t = row[0];
        let exact = (-t).exp() - 0.5 * (-2.0 * t).exp();
        assert!((row[1] - exact).abs() < 1e-9, "t {t}: {} vs {exact}", row[1]);
    }
}

#[test]
fn seeded_runs_repeat_byte_for_byte() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = ["--seed", "13", "gen", "linear", "--nodes", "10", "--sensors", "4", "--horizon", "1"];
    assert_eq!(run(&a, &args).status.code(), Some(0));
    assert_eq!(run(&b, &args).status.code(), Some(0));
    for name in ["y_data.csv", "y_clean.csv", "w_true.csv", "system.json", "scenario.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let model = a.join("system.json");
    let (sa, sb) = (dir.path().join("sa"), dir.path().join("sb"));
    for out in [&sa, &sb] {
        assert_eq!(run(out, &["simulate", "--system", model.to_str().unwrap(), "--horizon", "1"]).status.code(), Some(0));
    }
    assert_eq!(fs::read(sa.join("states.csv")).unwrap(), fs::read(sb.join("states.csv")).unwrap());
}

#[test]
fn consistent_noiseless_data_is_fit() {
    let dir = TempDir::new().unwrap();
    let gen = dir.path().join("gen");
    let args = ["--seed", "4", "gen", "linear", "--nodes", "8", "--sensors", "4", "--noise-std", "0", "--horizon", "1"];
    assert_eq!(run(&gen, &args).status.code(), Some(0));
    let out = dir.path().join("out");
    let sys = gen.join("system.json");
    let data = gen.join("y_data.csv");
    let o = run(&out, &["reconstruct", "--system", sys.to_str().unwrap(), "--data", data.to_str().unwrap(), "--beta", "1e-6"]);
    assert!(matches!(o.status.code(), Some(0) | Some(4)), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(out.join("result.json"));
    let y_norm = {
        let (_, rows) = table(data);
        rows.iter().flat_map(|r| r[1..].to_vec()).map(|v| v * v).sum::<f64>().sqrt()
    };
    let misfit = r["misfit"].as_f64().unwrap();
    assert!(misfit < 1e-2 * y_norm, "misfit {misfit} against data norm {y_norm}");
    let (header, _) = table(out.join("w_hat.csv"));
    assert_eq!(header.len(), 9);
}

#[test]
fn lorenz_refit_prunes_the_first_channel() {
    let dir = TempDir::new().unwrap();
    let gen = dir.path().join("gen");
    assert_eq!(run(&gen, &["gen", "lorenz"]).status.code(), Some(0));
    let data = gen.join("y_data.csv");
    let out = dir.path().join("out");
    let o = run(&out, &["reconstruct", "--model", "lorenz-linear", "--data", data.to_str().unwrap(), "--threshold-refit"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(out.join("result.json"));
    let support: Vec<u64> = r["support"].as_array().unwrap().iter().map(|e| e["node"].as_u64().unwrap()).collect();
    assert!(!support.contains(&0));
    assert!(support.contains(&1) && support.contains(&2), "{support:?}");
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.lines().count() >= 3);
}

#[test]
fn unreachable_discrepancy_is_a_numeric_failure() {
    let dir = TempDir::new().unwrap();
    let gen = dir.path().join("gen");
    let args = ["--seed", "2", "gen", "linear", "--nodes", "8", "--sensors", "2", "--noise-relative", "0.2", "--horizon", "1", "--no-spark-check"];
    assert_eq!(run(&gen, &args).status.code(), Some(0));
    let out = dir.path().join("out");
    let sys = gen.join("system.json");
    let data = gen.join("y_data.csv");
    let o = run(
        &out,
        &["reconstruct", "--system", sys.to_str().unwrap(), "--data", data.to_str().unwrap(), "--discrepancy", "1e-12", "--max-iterations", "200"],
    );
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(out.join("manifest.json"))["exit_code"], 3);
}

#[test]
fn manifest_records_digests_and_env_out_dir() {
    let dir = TempDir::new().unwrap();
    let sys = write(&dir, "g.json", FAN_IN);
    let out = dir.path().join("from-env");
    let o = bin().env("SPARSEFAULT_OUT_DIR", &out).args(["--seed", "5", "analyze", "--system", &sys]).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let m = json(out.join("manifest.json"));
    assert_eq!(m["command"], "analyze");
    assert_eq!(m["seed"], 5);
    assert_eq!(m["tool_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(m["inputs"][0]["path"], sys.as_str());
    let outputs = m["outputs"].as_array().unwrap();
    assert!(!outputs.is_empty());
    for entry in outputs {
        let path = entry["path"].as_str().unwrap();
        let digest = entry["sha256"].as_str().unwrap();
        assert_eq!(digest.len(), 64);
        assert!(Path::new(path).exists(), "{path}");
    }
}

#[test]
fn generated_instance_support_is_the_true_node() {
    let dir = TempDir::new().unwrap();
    for seed in ["0", "1", "2"] {
        let gen = dir.path().join(format!("gen{seed}"));
        assert_eq!(run(&gen, &["--seed", seed, "gen", "linear"]).status.code(), Some(0));
        let truth = json(gen.join("scenario.json"))["spec"]["support"].clone();
        let out = dir.path().join(format!("out{seed}"));
        let sys = gen.join("system.json");
        let data = gen.join("y_data.csv");
        let o = run(&out, &["reconstruct", "--system", sys.to_str().unwrap(), "--data", data.to_str().unwrap(), "--beta", "0.01"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let r = json(out.join("result.json"));
        let support: Vec<Value> = r["support"].as_array().unwrap().iter().map(|e| e["node"].clone()).collect();
        assert_eq!(Value::Array(support), truth, "seed {seed}");
    }
}
