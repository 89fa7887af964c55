use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn gnnflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gnnflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = gnnflow(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn generated(tmp: &TempDir, n: usize, avg: &str) -> String {
    let dir = tmp.path().join(format!("gen{n}"));
    ok(&["gen", "--nodes", &n.to_string(), "--avg-degree", avg, "--seed", "1", "--out", p(&dir)]);
    let file = report(&dir)["file"].as_str().unwrap().to_string();
    p(&dir.join(file)).to_string()
}

#[test]
fn model_gcn_on_mt() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("m");
    ok(&["model", "--model", "GCN", "--summary", "MT", "--out", p(&out)]);
    let r = report(&out);
    let seconds = r["cycles"]["seconds"].as_f64().unwrap();
    assert!((seconds - 0.0477).abs() < 5e-5, "{seconds}");
    assert_eq!(r["cycles"]["bottleneck"], "vmm");
    let csv = fs::read_to_string(out.join("cycles.csv")).unwrap();
    assert!(csv.starts_with("model,dataset,stage,cycles,bottleneck,seconds\n"));
    assert!(csv.contains("GCN,MT,vmm,23855276,"));
}

#[test]
fn pipeline_on_generated_graph_reports_the_check() {
    let tmp = TempDir::new().unwrap();
    let graph = generated(&tmp, 1000, "3");
    let out = tmp.path().join("p");
    let run = ok(&["pipeline", "--model", "GCN", "--graph", &graph, "--out", p(&out)]);
    assert!(String::from_utf8_lossy(&run.stdout).contains("<= 1e-4: pass"));
    let r = report(&out);
    assert_eq!(r["passed"], true);
    assert!(r["check"].as_str().unwrap().starts_with("max rel err"));
    assert!(r["max_rel_err"].as_f64().unwrap() <= 1e-4);
}

#[test]
fn failing_check_sets_exit_code() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("p");
    let args = ["pipeline", "--model", "GGCN", "--dims", "8", "--nodes", "30", "--avg-degree", "3"];
    let run = gnnflow(&[&args[..], &["--tolerance=-1", "--out", p(&out)]].concat());
    assert_eq!(run.status.code(), Some(1));
    assert_eq!(report(&out)["passed"], false);
}

#[test]
fn compare_reproduces_table_ratios() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("c");
    ok(&["compare", "--out", p(&out)]);
    let csv = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert!(csv.lines().any(|l| l == "GCN,MT,cpu_speedup,2.2,false"), "{csv}");
    assert!(csv.lines().any(|l| l == "GAT,PT,gpu_speedup,,true"));
    let r = report(&out);
    assert_eq!(r["maxima"]["cpu_speedup"]["model"], "MN");
    assert_eq!(r["oom"].as_array().unwrap().len(), 6);
}

#[test]
fn compare_uses_model_reports_for_hls_times() {
    let tmp = TempDir::new().unwrap();
    let m = tmp.path().join("m");
    ok(&["model", "--model", "GCN", "--summary", "MT", "--out", p(&m)]);
    let out = tmp.path().join("c");
    ok(&["compare", "--report", p(&m.join("report.json")), "--out", p(&out)]);
    let csv = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let row = csv.lines().find(|l| l.starts_with("GCN,MT,cpu_speedup,")).unwrap();
    let v: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
    assert!((v - 0.11 / 0.047710552).abs() < 1e-3, "{row}");
}

#[test]
fn gen_is_deterministic_and_handles_single_node() {
    let tmp = TempDir::new().unwrap();
    let a = generated(&tmp, 200, "2.5");
    let again = tmp.path().join("again");
    ok(&["gen", "--nodes", "200", "--avg-degree", "2.5", "--seed", "1", "--out", p(&again)]);
    let b = again.join(Path::new(&a).file_name().unwrap());
    assert_eq!(fs::read(&a).unwrap(), fs::read(b).unwrap());
    let one = tmp.path().join("one");
    ok(&["gen", "--nodes", "1", "--out", p(&one)]);
    assert_eq!(report(&one)["m"], 0);
}

#[test]
fn every_command_is_byte_reproducible() {
    let tmp = TempDir::new().unwrap();
    let graph = generated(&tmp, 60, "4");
    let runs: Vec<Vec<&str>> = vec![
        vec!["run", "--model", "GAT", "--graph", &graph],
        vec!["pipeline", "--model", "MN", "--graph", &graph, "--scheduler", "round-robin"],
        vec!["sim", "--model", "GGCN", "--graph", &graph, "--capacity", "2"],
        vec!["model", "--model", "GS", "--graph", &graph],
        vec!["characterize", "--model", "GIN", "--dims", "16", "--graph", &graph, "--sample", "20", "--dump-traces"],
        vec!["compare"],
    ];
    for (i, args) in runs.iter().enumerate() {
        let dirs: Vec<_> = (0..2).map(|k| tmp.path().join(format!("r{i}-{k}"))).collect();
        for d in &dirs {
            ok(&[&args[..], &["--out", p(d)]].concat());
        }
        let mut names: Vec<_> = fs::read_dir(&dirs[0]).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert!(!names.is_empty());
        for name in names {
            let a = fs::read(dirs[0].join(&name)).unwrap();
            let b = fs::read(dirs[1].join(&name)).unwrap();
            assert!(a == b, "{args:?}: {name:?} differs");
        }
    }
}

#[test]
fn characterize_writes_scores_and_traces() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("ch");
    ok(&["characterize", "--nodes", "80", "--avg-degree", "4", "--dims", "8", "--model", "GCN", "--sample", "10", "--dump-traces", "--out", p(&out)]);
    let csv = fs::read_to_string(out.join("characterization.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(fs::read(out.join("GCN.gnnt")).unwrap().starts_with(b"GNNT"));
    let r = report(&out);
    let s = &r["models"][0]["summary"]["scores"];
    for key in ["spatial", "temporal"] {
        let v = s[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
}

#[test]
fn saved_params_round_trip_through_pipeline() {
    let tmp = TempDir::new().unwrap();
    let graph = generated(&tmp, 40, "3");
    let run = tmp.path().join("run");
    ok(&["run", "--model", "GAT", "--dims", "8,2,4", "--graph", &graph, "--seed", "5", "--save-params", "--out", p(&run)]);
    let manifest = run.join("params/manifest.json");
    let pipe = tmp.path().join("pipe");
    ok(&["pipeline", "--model", "GAT", "--graph", &graph, "--seed", "5", "--params", p(&manifest), "--out", p(&pipe)]);
    let seeded = tmp.path().join("seeded");
    ok(&["pipeline", "--model", "GAT", "--dims", "8,2,4", "--graph", &graph, "--seed", "5", "--out", p(&seeded)]);
    assert_eq!(
        fs::read(seeded.join("nodes.gnnh")).unwrap(),
        fs::read(pipe.join("nodes.gnnh")).unwrap()
    );
    let wrong = gnnflow(&["pipeline", "--model", "GCN", "--graph", &graph, "--params", p(&manifest), "--out", p(&pipe)]);
    assert!(!wrong.status.success());
}

#[test]
fn config_file_with_flag_overrides() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("cfg.json");
    let out = tmp.path().join("o");
    fs::write(
        &cfg,
        format!(r#"{{"model": "GCN", "summary": "MT", "num_cus": 1, "out": "{}"}}"#, p(&out)),
    )
    .unwrap();
    ok(&["model", "--config", p(&cfg)]);
    let one = report(&out)["cycles"]["seconds"].as_f64().unwrap();
    ok(&["model", "--config", p(&cfg), "--cus", "2"]);
    let two = report(&out)["cycles"]["seconds"].as_f64().unwrap();
    assert!((one - 2.0 * two).abs() < 1e-12);
    fs::write(&cfg, r#"{"model": "GCN", "bogus": 1}"#).unwrap();
    assert!(!gnnflow(&["model", "--config", p(&cfg)]).status.success());
}

#[test]
fn bad_inputs_fail_with_a_message() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("x");
    let cases: Vec<Vec<&str>> = vec![
        vec!["run", "--model", "GCN", "--graph", "/nonexistent/graph.txt"],
        vec!["run", "--model", "GCN", "--dims", "8,2,4", "--nodes", "10"],
        vec!["model", "--model", "GCN", "--summary", "MT", "--nodes", "10"],
        vec!["sim", "--model", "GCN", "--summary", "MT"],
        vec!["model", "--model", "XYZ", "--summary", "MT"],
        vec!["model", "--model", "GCN", "--summary", "MT", "--freq-mhz", "0"],
    ];
    for args in cases {
        let run = gnnflow(&[&args[..], &["--out", p(&out)]].concat());
        assert_eq!(run.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&run.stderr).starts_with("error:"), "{args:?}");
    }
}
