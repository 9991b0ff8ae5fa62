use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn gtmancer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gtmancer"))
        .args(args)
        .env_remove("GTMANCER_LOG")
        .output()
        .expect("binary runs")
}

fn synth_into(dir: &Path, n: &str, m: &str, classes: &str, seed: &str) -> (Vec<String>, String) {
    let out = gtmancer(&[
        "synth",
        "--n",
        n,
        "--m",
        m,
        "--classes",
        classes,
        "--seed",
        seed,
        "--dims",
        "6",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m: usize = m.parse().unwrap();
    let views = (0..m)
        .map(|i| dir.join(format!("view{i}.csv")).display().to_string())
        .collect();
    (views, dir.join("labels.csv").display().to_string())
}

fn train_args<'a>(views: &'a [String], labels: &'a str, out: &'a str) -> Vec<&'a str> {
    let mut args = vec!["train", "--views"];
    args.extend(views.iter().map(String::as_str));
    args.extend(["--labels", labels, "--out", out, "--epochs", "15", "--latent-dim", "8", "--label-ratio", "0.3"]);
    args
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn synth_writes_loadable_files_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (views, labels) = synth_into(dir.path(), "40", "3", "4", "7");
    for v in &views {
        assert!(Path::new(v).is_file());
    }
    assert!(Path::new(&labels).is_file());
    let manifest = read_json(dir.path().join("manifest.json"));
    assert_eq!(manifest["schema_version"], 1);
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 4);
    let ds = gtmancer::dataio::load_dataset(&views, &labels).unwrap();
    assert_eq!((ds.n_samples(), ds.n_views(), ds.class_count), (40, 3, 4));
    assert_eq!(manifest["dataset_digest"], ds.digest());
}

#[test]
fn synth_rejects_impossible_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let out = gtmancer(&["synth", "--n", "3", "--classes", "5", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_writes_artifacts_and_export_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let (views, labels) = synth_into(&dir.path().join("data"), "60", "2", "3", "1");
    let run = dir.path().join("run");
    let run_s = run.display().to_string();
    let out = gtmancer(&train_args(&views, &labels, &run_s));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("macro_f1="));

    let metrics = read_json(run.join("metrics.json"));
    assert_eq!(metrics["schema_version"], 1);
    let acc = metrics["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(metrics["per_layer_objective"].as_array().unwrap().len(), 4);

    let log = std::fs::read_to_string(run.join("train.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 15);
    for line in log.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert!(v["total_loss"].as_f64().unwrap().is_finite());
    }

    let manifest = read_json(run.join("manifest.json"));
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 3);
    assert_eq!(manifest["config"]["epochs"], 15);
    let names: Vec<String> = std::fs::read_dir(&run)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names.iter().filter(|n| n.contains("manifest")).count(), 1);
    assert!(names.iter().all(|n| !n.contains(".tmp")));

    let tsv = dir.path().join("emb/z.tsv");
    let model = run.join("model.bin").display().to_string();
    let mut argv = vec!["export-embeddings", "--model", model.as_str(), "--views"];
    argv.extend(views.iter().map(String::as_str));
    let tsv_s = tsv.display().to_string();
    argv.extend(["--labels", labels.as_str(), "--out", tsv_s.as_str()]);
    let out = gtmancer(&argv);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&tsv).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split('\t').collect();
    assert_eq!(header[..2], ["sample_id", "label"]);
    assert_eq!(header.len(), 2 + 8);
    assert_eq!(lines.count(), 60);
}

#[test]
fn export_with_mismatched_views_is_a_digest_error() {
    let dir = tempfile::tempdir().unwrap();
    let (views, labels) = synth_into(&dir.path().join("data"), "40", "2", "2", "2");
    let run = dir.path().join("run").display().to_string();
    assert_eq!(gtmancer(&train_args(&views, &labels, &run)).status.code(), Some(0));
    let model = format!("{run}/model.bin");
    let tsv = dir.path().join("z.tsv").display().to_string();
    let out = gtmancer(&[
        "export-embeddings",
        "--model",
        &model,
        "--views",
        &views[0],
        "--labels",
        &labels,
        "--out",
        &tsv,
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("digest"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let (views, labels) = synth_into(&dir.path().join("data"), "40", "2", "2", "3");
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# small run\nk = 2\nepochs = 99\nfusion = concat\n").unwrap();
    let run = dir.path().join("run").display().to_string();
    let cfg_s = cfg.display().to_string();
    let mut args = train_args(&views, &labels, &run);
    args.extend(["--config", cfg_s.as_str()]);
    assert_eq!(gtmancer(&args).status.code(), Some(0));
    let manifest = read_json(PathBuf::from(&run).join("manifest.json"));
    assert_eq!(manifest["config"]["k"], 2);
    assert_eq!(manifest["config"]["epochs"], 15);
    assert_eq!(manifest["config"]["fusion"], "concat");

    std::fs::write(&cfg, "nonsense = 1\n").unwrap();
    assert_eq!(gtmancer(&args).status.code(), Some(2));
}

#[test]
fn bad_inputs_exit_with_usage_code() {
    assert_eq!(gtmancer(&["train"]).status.code(), Some(2));
    assert_eq!(gtmancer(&["frobnicate"]).status.code(), Some(2));
    let out = gtmancer(&["train", "--views", "/no/such.csv", "--labels", "/no/l.csv", "--out", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such.csv"));
    assert_eq!(gtmancer(&["--help"]).status.code(), Some(0));
}

#[test]
fn verify_reports_and_flags_oversized_steps() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let diag = dir.path().join("d.jsonl");
    let out = gtmancer(&[
        "verify",
        "--seeds",
        "3",
        "--report",
        report.to_str().unwrap(),
        "--diagnostics",
        diag.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = read_json(report.clone());
    assert_eq!(v["all_pass"], true);
    assert_eq!(v["properties"].as_array().unwrap().len(), 4);
    let lines = std::fs::read_to_string(&diag).unwrap();
    assert_eq!(lines.lines().count(), 30);
    let first: Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert!(first["spectral_radius_S_over_3"].as_f64().unwrap() <= 0.9 + 1e-12);

    let out = gtmancer(&["verify", "--seeds", "2", "--alpha-scale", "4", "--report", report.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(read_json(report)["properties"][0]["status"], "not_guaranteed");
    assert!(String::from_utf8_lossy(&out.stderr).contains("not guaranteed"));

    assert_eq!(gtmancer(&["verify", "--seeds", "0"]).status.code(), Some(2));
}
