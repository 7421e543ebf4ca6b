use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

use dart_core::experiment::ExperimentReport;
use dart_core::io::RunManifest;
use dart_core::rng::SeededRng;
use dart_core::simulation::gen_dataset_se4;
use dart_core::AggregationTree;

fn dart(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dart"))
        .args(args)
        .env("DART_LOG", "error")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn three_feature_tree(dir: &Path) -> PathBuf {
    let coords = write(dir, "coords.csv", "0,0\n1,0\n2,0\n");
    let tree = dir.join("tree.json");
    let out = dart(&["build-tree", "--coords", s(&coords), "--M", "3", "--L", "2", "--g", "2", "--out", s(&tree)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    tree
}

#[test]
fn build_tree_from_coordinates() {
    let dir = tempfile::tempdir().unwrap();
    let tree = AggregationTree::from_json(&fs::read_to_string(three_feature_tree(dir.path())).unwrap()).unwrap();
    let top: Vec<_> = tree.layer(2).collect();
    assert_eq!(top.len(), 1);
    assert_eq!(top[0].features, vec![0, 1, 2]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("tree.json")).unwrap()).unwrap();
    let last = json["nodes"].as_array().unwrap().last().unwrap().clone();
    assert_eq!(last["features"], serde_json::json!([1, 2, 3]));
}

#[test]
fn automatic_thresholds_need_sixteen_features() {
    let dir = tempfile::tempdir().unwrap();
    let coords: String = (0..10).map(|i| format!("{i},0\n")).collect();
    let coords = write(dir.path(), "c.csv", &coords);
    let out = dart(&["build-tree", "--coords", s(&coords), "--g", "auto", "--n", "90", "--out", s(&dir.path().join("t.json"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("16"));

    let out = dart(&["build-tree", "--coords", s(&coords), "--g", "auto", "--out", s(&dir.path().join("t.json"))]);
    assert_eq!(code(&out), 2, "missing --n");
}

#[test]
fn automatic_thresholds_write_trace() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = SeededRng::new(5);
    let coords: String = (0..120).map(|_| format!("{},{}\n", rng.uniform() * 4.0, rng.uniform() * 4.0)).collect();
    let coords = write(dir.path(), "c.csv", &coords);
    let tree = dir.path().join("t.json");
    let out = dart(&["build-tree", "--coords", s(&coords), "--n", "90", "--out", s(&tree)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(dir.path().join("t.gsearch.csv")).unwrap();
    assert!(trace.starts_with("layer,k,g_scaled,g,count,chosen"));
    assert_eq!(trace.lines().filter(|l| l.ends_with(",true")).count(), 1);
    let tree = AggregationTree::from_json(&fs::read_to_string(&tree).unwrap()).unwrap();
    assert_eq!(tree.layer_count(), 2);
}

#[test]
fn normalized_distances_scale_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let d = write(dir.path(), "d.csv", "0,1,5\n1,0,4\n5,4,0\n");
    let log = dir.path().join("merge.jsonl");
    let out = dart(&[
        "build-tree", "--distances", s(&d), "--normalize", "--M", "3", "--g", "0.5",
        "--out", s(&dir.path().join("t.json")), "--merge-log", s(&log),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let events: Vec<serde_json::Value> = fs::read_to_string(&log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(events[0]["distance"], 0.2);
    assert_eq!(events[0]["action"], "merge");
    assert_eq!(events.last().unwrap()["action"], "stop");
}

#[test]
fn exactly_one_distance_source() {
    let dir = tempfile::tempdir().unwrap();
    let c = write(dir.path(), "c.csv", "0,0\n1,0\n");
    let d = write(dir.path(), "d.csv", "0,1\n1,0\n");
    let t = dir.path().join("t.json");
    assert_eq!(code(&dart(&["build-tree", "--coords", s(&c), "--distances", s(&d), "--g", "1", "--out", s(&t)])), 2);
    assert_eq!(code(&dart(&["build-tree", "--g", "1", "--out", s(&t)])), 2);
}

#[test]
fn test_command_outputs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let tree = three_feature_tree(dir.path());
    let p = write(dir.path(), "p.csv", "1\n1\n1\n");
    let out_dir = dir.path().join("run");
    let out = dart(&["test", "--tree", s(&tree), "--pvalues", s(&p), "--alpha", "0.1", "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read_to_string(out_dir.join("rejected.txt")).unwrap(), "");
    let layers = fs::read_to_string(out_dir.join("layers.csv")).unwrap();
    assert_eq!(layers.lines().next().unwrap(), "layer,node_count,threshold,rejected_node_count,cumulative_rejected_features");
    assert_eq!(layers.lines().count(), 3);

    let manifest = RunManifest::from_json(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.inputs.len(), 2);
    for input in &manifest.inputs {
        assert_eq!(input.sha256, hex(&fs::read(&input.path).unwrap()));
    }
    assert_eq!(manifest.config["alpha"], 0.1);
    assert_eq!(manifest.version, env!("CARGO_PKG_VERSION"));

    let m = s(&out_dir.join("manifest.json")).to_owned();
    assert_eq!(code(&dart(&["verify", &m])), 0);
    fs::write(&p, "0.5\n1\n1\n").unwrap();
    assert_eq!(code(&dart(&["verify", &m])), 2);
}

#[test]
fn test_command_rejects_the_ten_strong_features() {
    let dir = tempfile::tempdir().unwrap();
    let coords: String = (0..100).map(|i| format!("{},0\n", i * 10)).collect();
    let coords = write(dir.path(), "c.csv", &coords);
    let tree = dir.path().join("t.json");
    assert_eq!(code(&dart(&["build-tree", "--coords", s(&coords), "--g", "1", "--out", s(&tree)])), 0);
    let p: String = (0..100).map(|i| if i % 10 == 3 { "0.001\n" } else { "0.9\n" }).collect();
    let p = write(dir.path(), "p.csv", &p);
    let out_dir = dir.path().join("run");
    let out = dart(&["test", "--tree", s(&tree), "--pvalues", s(&p), "--alpha", "0.1", "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0);
    let rejected: Vec<usize> = fs::read_to_string(out_dir.join("rejected.txt"))
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    assert_eq!(rejected, (0..10).map(|k| 10 * k + 4).collect::<Vec<_>>());
    let outcome: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("outcome.json")).unwrap()).unwrap();
    assert!((outcome["layers"][0]["threshold"].as_f64().unwrap() - 0.01).abs() < 1e-15);
}

#[test]
fn test_command_user_errors() {
    let dir = tempfile::tempdir().unwrap();
    let tree = three_feature_tree(dir.path());
    let p = write(dir.path(), "p.csv", "0.5\n0.5\n0.5\n");
    let out_dir = s(&dir.path().join("run")).to_owned();
    let out = dart(&["test", "--tree", s(&tree), "--pvalues", s(&p), "--alpha", "1.5", "--out", &out_dir]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha"));

    let short = write(dir.path(), "short.csv", "0.5\n0.5\n");
    assert_eq!(code(&dart(&["test", "--tree", s(&tree), "--pvalues", s(&short), "--alpha", "0.1", "--out", &out_dir])), 2);

    let bad = write(dir.path(), "bad.csv", "0.5\nabc\n0.5\n");
    let out = dart(&["test", "--tree", s(&tree), "--pvalues", s(&bad), "--alpha", "0.1", "--out", &out_dir]);
    assert_eq!(code(&out), 2);
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("bad.csv") && msg.contains("line 2"), "{msg}");

    let missing = s(&dir.path().join("nope.csv")).to_owned();
    assert_eq!(code(&dart(&["test", "--tree", s(&tree), "--pvalues", &missing, "--alpha", "0.1", "--out", &out_dir])), 2);
}

#[test]
fn bh_command() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "p.csv", "feature,p\n1,0.01\n2,0.02\n3,0.04\n4,0.9\n");
    let out_dir = dir.path().join("bh");
    assert_eq!(code(&dart(&["bh", "--pvalues", s(&p), "--alpha", "0.1", "--out", s(&out_dir)])), 0);
    assert_eq!(fs::read_to_string(out_dir.join("rejected.txt")).unwrap(), "1\n2\n3\n");
    assert!(out_dir.join("manifest.json").exists());
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: Option<&str>| {
        let out_dir = dir.path().join(name);
        let mut args = vec!["simulate", "--setting", "SE1", "--n", "90", "--m", "100", "--reps", "6", "--fixed-layout", "--export-design", "--jobs", "2", "--out"];
        let o = s(&out_dir).to_owned();
        args.push(&o);
        if let Some(seed) = seed {
            args.extend(["--seed", seed]);
        }
        let out = dart(&args);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        out_dir
    };
    let a = run("a", Some("11"));
    let b = run("b", Some("11"));
    for f in ["report.csv", "replications.csv", "report.json", "design/coords.csv", "design/tree.json", "design/truth.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let summary = fs::read_to_string(a.join("report.csv")).unwrap();
    let rows = ExperimentReport::summary_from_csv(&summary).unwrap();
    for alpha in [0.05, 0.1, 0.15, 0.2] {
        assert!(rows.iter().any(|r| r.alpha == alpha));
    }
    let records = ExperimentReport::records_from_csv(&fs::read_to_string(a.join("replications.csv")).unwrap()).unwrap();
    assert_eq!(records.iter().map(|r| r.replication).max(), Some(5));

    let c = run("c", None);
    let manifest = RunManifest::from_json(&fs::read_to_string(c.join("manifest.json")).unwrap()).unwrap();
    let seed = manifest.seed.expect("generated seed is recorded").to_string();
    let d = run("d", Some(&seed));
    assert_eq!(fs::read(c.join("report.json")).unwrap(), fs::read(d.join("report.json")).unwrap());
}

#[test]
fn simulate_rejects_bad_alphas() {
    let dir = tempfile::tempdir().unwrap();
    let o = s(&dir.path().join("x")).to_owned();
    assert_eq!(code(&dart(&["simulate", "--setting", "SE1", "--alphas", "0.1,1.2", "--reps", "2", "--seed", "1", "--out", &o])), 2);
    assert_eq!(code(&dart(&["simulate", "--setting", "SE9", "--out", &o])), 2);
}

fn matrix_csv(m: &nalgebra::DMatrix<f64>) -> String {
    (0..m.nrows())
        .map(|i| {
            let row: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
            row.join(",") + "\n"
        })
        .collect()
}

#[test]
fn bootstrap_writes_one_rate_per_feature() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = SeededRng::new(8);
    let mut theta = vec![0.0; 20];
    theta[..4].fill(1.2);
    let data = gen_dataset_se4(&theta, 90, &mut rng).unwrap();
    let y = write(dir.path(), "y.csv", &matrix_csv(&data.y));
    let w = write(dir.path(), "w.csv", &matrix_csv(&data.w));
    let out_dir = dir.path().join("boot");
    let out = dart(&["bootstrap", "--data", s(&y), s(&w), "--B", "200", "--seed", "3", "--alpha", "0.1", "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rates = dart_core::experiment::StabilityReport::rates_from_csv(&fs::read_to_string(out_dir.join("stability.csv")).unwrap()).unwrap();
    assert_eq!(rates.len(), 20);
    assert!(rates[..4].iter().all(|&r| r > 0.8), "{rates:?}");
    let manifest = RunManifest::from_json(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.seed, Some(3));
    assert_eq!(manifest.config["contrast"], serde_json::json!([0.0, 1.0, 0.0]));
}

#[test]
fn degenerate_design_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let y: String = (0..10).map(|i| format!("{}\n", i as f64 * 0.37 % 1.0)).collect();
    let w: String = (0..10).map(|i| format!("1,{i},{i}\n")).collect();
    let y = write(dir.path(), "y.csv", &y);
    let w = write(dir.path(), "w.csv", &w);
    let out = dart(&["bootstrap", "--data", s(&y), s(&w), "--B", "5", "--seed", "1", "--out", s(&dir.path().join("b"))]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}
