use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cdmafs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdmafs"))
        .args(args)
        .env_clear()
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    let out = cdmafs(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.toml");
    let text = format!(
        "seed = 3\n\n[dataset]\nviews = [\"view0.csv\", \"view1.csv\"]\nskip_header = true\nlabels = \"labels.txt\"\n\n[output]\ndir = \"out\"\n{extra}"
    );
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_writes_views_and_labels_deterministically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path(), &["--seed", "9", "--n", "30", "--noise", "5"]);
    synth(b.path(), &["--seed", "9", "--n", "30", "--noise", "5"]);
    for name in ["view0.csv", "view1.csv", "labels.txt"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap()
        );
    }
    assert!(!a.path().join("view2.csv").exists());
    assert_eq!(
        fs::read_to_string(a.path().join("labels.txt")).unwrap().lines().count(),
        30
    );

    let out = cdmafs(&["synth", "--out", a.path().to_str().unwrap(), "--clusters", "1"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn fuse_writes_graph_files_and_purity() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["--n", "60"]);
    let config = write_config(dir.path(), "");
    let out = cdmafs(&["fuse", "--config", &config]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out_dir = dir.path().join("out");
    for name in ["graph.coo", "p_star.coo", "diagnostics.json"] {
        assert!(out_dir.join(name).is_file(), "{name}");
    }
    let diag = json(&out_dir.join("diagnostics.json"));
    assert!(diag["purity"]["components"].as_array().is_some_and(|c| !c.is_empty()));
    assert!(diag["iterations_run"].as_u64().unwrap() >= 1);
}

#[test]
fn missing_input_is_a_data_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["--n", "30"]);
    fs::remove_file(dir.path().join("view1.csv")).unwrap();
    let config = write_config(dir.path(), "");
    let out = cdmafs(&["fuse", "--config", &config]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("view1.csv"), "{}", stderr(&out));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["--n", "30"]);
    let config = write_config(dir.path(), "\n[selection]\ntarget_d = [101]\n");
    let out = cdmafs(&["select", "--config", &config]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("target_d"), "{}", stderr(&out));

    let config = write_config(dir.path(), "\n[diffusion]\nbogus = 1\n");
    assert_eq!(code(&cdmafs(&["fuse", "--config", &config])), 2);
    let missing = dir.path().join("absent.toml");
    assert_eq!(code(&cdmafs(&["fuse", "--config", missing.to_str().unwrap()])), 2);
}

#[test]
fn select_honors_per_view_targets_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["--n", "60"]);
    let config = write_config(dir.path(), "\n[selection]\ntarget_d = [100, 100]\n");
    let out = cdmafs(&["select", "--config", &config]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let sel = json(&dir.path().join("out/selection.json"));
    let views = sel["views"].as_array().unwrap();
    assert_eq!(views.len(), 2);
    for v in views {
        assert_eq!(v["selected"].as_array().unwrap().len(), 100);
        assert!(v["lambda"].as_f64().is_some());
        assert!(!v["solver"]["trace"].as_array().unwrap().is_empty());
    }

    let other = dir.path().join("other");
    let out = cdmafs(&[
        "select",
        "--config",
        &config,
        "--set",
        "selection.target_d=[4]",
        "--out",
        other.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let sel = json(&other.join("selection.json"));
    assert_eq!(sel["views"][1]["selected"].as_array().unwrap().len(), 4);
    let manifest = json(&other.join("manifest.json"));
    assert_eq!(manifest["seed"].as_u64(), Some(3));
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 3);
    assert_eq!(manifest["outputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn select_against_a_fused_graph_matches_inline_fusion() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["--n", "60"]);
    let config = write_config(dir.path(), "");
    assert_eq!(code(&cdmafs(&["fuse", "--config", &config])), 0);
    let graph = dir.path().join("out/graph.coo");
    let with_graph = dir.path().join("g");
    let out = cdmafs(&[
        "select",
        "--config",
        &config,
        "--graph",
        graph.to_str().unwrap(),
        "--out",
        with_graph.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(code(&cdmafs(&["select", "--config", &config])), 0);
    let a = json(&with_graph.join("selection.json"));
    let b = json(&dir.path().join("out/selection.json"));
    assert!(a["diffusion"].is_null());
    for v in 0..2 {
        assert_eq!(a["views"][v]["selected"], b["views"][v]["selected"]);
    }
}

#[test]
fn evaluate_reports_every_repeat_and_baseline() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["--n", "60"]);
    let config = write_config(dir.path(), "");
    assert_eq!(code(&cdmafs(&["select", "--config", &config])), 0);
    let selection = dir.path().join("out/selection.json");
    let csv = dir.path().join("metrics.csv");
    let out = cdmafs(&[
        "evaluate",
        "--config",
        &config,
        "--selection",
        selection.to_str().unwrap(),
        "--repeats",
        "20",
        "--all-features",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let metrics = json(&dir.path().join("out/metrics.json"));
    let reports = metrics["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[0]["label"], "selected");
    assert_eq!(reports[1]["label"], "all-features");
    for r in reports {
        assert_eq!(r["runs"].as_array().unwrap().len(), 20);
        let acc = r["accuracy"]["mean"].as_f64().unwrap();
        let nmi = r["nmi"]["mean"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&acc) && (0.0..=1.0).contains(&nmi));
    }
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 3);
}

#[test]
fn evaluate_without_labels_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["--n", "30"]);
    let config = write_config(dir.path(), "");
    assert_eq!(code(&cdmafs(&["select", "--config", &config])), 0);
    let path = dir.path().join("run.toml");
    let text = fs::read_to_string(&path)
        .unwrap()
        .replace("labels = \"labels.txt\"\n", "");
    fs::write(&path, text).unwrap();
    let selection = dir.path().join("out/selection.json");
    let out = cdmafs(&[
        "evaluate",
        "--config",
        &config,
        "--selection",
        selection.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn rerun_reproduces_the_selection() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["--n", "60"]);
    let config = write_config(dir.path(), "");
    assert_eq!(code(&cdmafs(&["select", "--config", &config, "--threads", "2"])), 0);
    let manifest = dir.path().join("out/manifest.json");
    let again = dir.path().join("again");
    let out = cdmafs(&[
        "rerun",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        fs::read(dir.path().join("out/selection.json")).unwrap(),
        fs::read(again.join("selection.json")).unwrap()
    );

    fs::write(dir.path().join("view0.csv"), "changed\n").unwrap();
    let out = cdmafs(&[
        "rerun",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
}
