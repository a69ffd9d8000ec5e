use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hattn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hattn")).args(args).env("RUST_LOG", "warn").output().expect("run hattn")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("exp.toml");
    std::fs::write(&p, body).unwrap();
    p
}

fn run_ok(args: &[&str]) -> String {
    let out = hattn(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn unknown_field_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[model]\nemb = 3\n");
    let out = hattn(&["cost", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("emb"));
}

#[test]
fn invalid_value_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[model]\nn_query_heads = 3\n");
    let out = hattn(&["cost", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model"));
}

#[test]
fn missing_config_file_and_bad_arguments_exit_one() {
    assert_eq!(hattn(&["niah", "--config", "/nonexistent/x.toml"]).status.code(), Some(1));
    assert_eq!(hattn(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(hattn(&["--version"]).status.code(), Some(0));
}

#[test]
fn missing_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[niah]\nlengths = [64]\nseeds_per_cell = 1\n");
    let out = hattn(&["niah", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
}

#[test]
fn cost_reports_the_full_scale_kv_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("cost-full-scale.toml");
    run_ok(&["cost", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    let csv = std::fs::read_to_string(dir.path().join("cost.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# command=cost config_sha256="));
    let mut rdr = csv::Reader::from_reader(csv.split_once('\n').unwrap().1.as_bytes());
    let header = rdr.headers().unwrap().clone();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let row = rdr.records().map(|r| r.unwrap()).find(|r| &r[col("L")] == "131072").expect("131072 row");
    let ratio: f64 = row[col("kv_ratio")].parse().unwrap();
    assert!((ratio - 0.2734375).abs() < 1e-4, "{ratio}");
    // The layout field contains spaces and is quoted only as needed.
    assert!(row[col("layout")].contains("nope"));
}

#[test]
fn untrained_model_scores_near_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[model]\nemb_dim = 32\nffn_dim = 64\nn_layers = 4\nn_query_heads = 2\nn_kv_heads = 1\nmax_seq = 256\n\
         [niah]\nuntrained = true\nlengths = [64, 128]\nseeds_per_cell = 8\n",
    );
    let out = dir.path().join("o");
    run_ok(&["niah", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("niah_summary.json")).unwrap()).unwrap();
    assert!(v["data"]["score"].as_f64().unwrap() <= 1.0, "{}", v["data"]["score"]);
    assert_eq!(v["meta"]["command"], "niah");
}

#[test]
fn train_niah_analyze_compare_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let smoke = configs().join("smoke.toml");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, seed) in [(&a, "7"), (&b, "8")] {
        let o = out.to_str().unwrap();
        run_ok(&["train", "--config", smoke.to_str().unwrap(), "--out", o, "--seed", seed]);
        run_ok(&["niah", "--config", smoke.to_str().unwrap(), "--out", o, "--seed", seed]);
        run_ok(&["analyze", "--config", smoke.to_str().unwrap(), "--out", o, "--seed", seed]);
    }
    for f in ["checkpoint.bin", "metrics.csv", "train_summary.json", "niah_cells.csv", "niah_heatmap.csv", "mass.csv", "entropy.csv"] {
        assert!(a.join(f).exists(), "{f}");
    }
    let metrics = std::fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().nth(1).unwrap(), "step,lr,loss,tokens_seen");
    assert_eq!(metrics.lines().count(), 2 + 20);

    let cmp = write_config(
        dir.path(),
        &format!(
            "[[compare.runs]]\nname = \"first, seed 7\"\ndir = {:?}\n[[compare.runs]]\nname = \"second\"\ndir = {:?}\n",
            a.to_str().unwrap(),
            b.to_str().unwrap()
        ),
    );
    let out = dir.path().join("cmp");
    let stdout = run_ok(&["compare", "--config", cmp.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(stdout.contains("first, seed 7 "));
    let table = std::fs::read_to_string(out.join("compare_scores.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[1], "Model,Needles Score");
    assert!(lines[2].starts_with("\"first, seed 7\","), "RFC 4180 quoting: {}", lines[2]);
    let mass = std::fs::read_to_string(out.join("compare_mass.csv")).unwrap();
    assert_eq!(mass.lines().nth(1).unwrap(), "Model,Length,Layers,Begin,Needle,Context,End");
}

#[test]
fn analyze_reads_saved_traces() {
    let dir = tempfile::tempdir().unwrap();
    let smoke = std::fs::read_to_string(configs().join("smoke.toml")).unwrap();
    let live = dir.path().join("live");
    let cfg = write_config(dir.path(), &smoke.replace("samples = 2", "samples = 2\nsave_traces = true"));
    let o = live.to_str().unwrap();
    run_ok(&["train", "--config", cfg.to_str().unwrap(), "--out", o]);
    run_ok(&["analyze", "--config", cfg.to_str().unwrap(), "--out", o]);
    let mut traces: Vec<String> = std::fs::read_dir(live.join("traces"))
        .unwrap()
        .map(|e| e.unwrap().path().to_str().unwrap().to_string())
        .collect();
    traces.sort();
    assert_eq!(traces.len(), 2);

    let offline = dir.path().join("offline.toml");
    let list: Vec<String> = traces.iter().map(|t| format!("{t:?}")).collect();
    std::fs::write(&offline, format!("[analysis]\ntraces = [{}]\n", list.join(", "))).unwrap();
    let off = dir.path().join("off");
    run_ok(&["analyze", "--config", offline.to_str().unwrap(), "--out", off.to_str().unwrap()]);
    let body = |p: &Path| {
        let s = std::fs::read_to_string(p).unwrap();
        s.split_once('\n').unwrap().1.to_string()
    };
    assert_eq!(body(&live.join("mass.csv")), body(&off.join("mass.csv")));
}
