use std::path::Path;
use std::process::{Command, Output};

fn gascreen(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gascreen"))
        .args(args)
        .current_dir(cwd)
        .env_remove("GASCREEN_DATA_ROOT")
        .output()
        .expect("binary runs")
}

fn config(k: usize) -> String {
    format!(
        r#"task = "ga"
manifest = "data/manifest.csv"
output_dir = "exp"

[preprocess]
target_size = 32

[folds]
k = {k}
seed = 3

[model]
profile = "tiny"
input_size = 32
pretrained = false
task = "ga"

[training]
max_epochs = 1
patience_epochs = 1
"#
    )
}

#[test]
fn single_fold_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.toml"), config(1)).unwrap();
    let out = gascreen(&["--config", "exp.toml", "run-crossval"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("k = 1"));
}

#[test]
fn missing_manifest_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = gascreen(&["ingest", "nowhere.csv"], dir.path());
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn synth_split_and_specialist_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let out = gascreen(&["synth-gen", "--n", "40", "--size", "64", "--seed", "2", "--out", "data"], p);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(p.join("data/manifest.csv").exists());

    std::fs::write(p.join("exp.toml"), config(5)).unwrap();
    let out = gascreen(&["--config", "exp.toml", "split"], p);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(p.join("exp/folds.csv").exists());
    assert!(p.join("exp/run_4/split.json").exists());

    // Flags override the config: a different output directory.
    let out = gascreen(&["--config", "exp.toml", "--out", "other", "split"], p);
    assert!(out.status.success());
    assert!(p.join("other/folds.csv").exists());

    // Synthetic manifests carry no specialist grades.
    let out = gascreen(&["evaluate", "--specialist", "--manifest", "data/manifest.csv"], p);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn data_root_resolves_relative_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert!(gascreen(&["synth-gen", "--n", "8", "--size", "64", "--out", "data"], p).status.success());
    let elsewhere = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_gascreen"))
        .args(["ingest", "manifest.csv"])
        .current_dir(elsewhere.path())
        .env("GASCREEN_DATA_ROOT", p.join("data"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("\"images\": 8"));
}
