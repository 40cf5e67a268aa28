use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gff2dlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gff2dlab")).args(args).env("GFF2DLAB_WORKERS", "2").output().expect("binary runs")
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn digests(m: &Value) -> Vec<(String, String)> {
    m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| (o["path"].as_str().unwrap().to_string(), o["sha256"].as_str().unwrap().to_string()))
        .collect()
}

#[test]
fn empty_config_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("empty.toml");
    std::fs::write(&config, "").unwrap();
    let out = gff2dlab(&["run", "--config", config.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(dir.path());
    assert_eq!(m["tasks"].as_array().unwrap().len(), 0);
}

#[test]
fn scaling_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.toml");
    std::fs::write(&grid, "[[cell]]\nN = 8\na = 0.1\n").unwrap();
    let out = gff2dlab(&[
        "scaling",
        "--grid",
        grid.to_str().unwrap(),
        "--samples",
        "200",
        "--side-factor",
        "4",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(dir.path().join("scaling-scaling.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("a,N,g_n,xi,"));
    let digests = digests(&manifest(dir.path()));
    assert!(digests.iter().any(|(p, _)| p == "scaling-scaling.csv"));
}

#[test]
fn rerun_from_manifest_reproduces_outputs() {
    let first = tempfile::tempdir().unwrap();
    let config = first.path().join("run.toml");
    std::fs::write(
        &config,
        r#"
seed = 11
[[experiment]]
kind = "theta"
name = "theta"
N = 8
abar = 0.2
samples = 300
side_factor = 4

[[experiment]]
kind = "sample"
name = "field.bin"
N = 4
side = 16

[[experiment]]
kind = "interlace"
name = "cloud"
N = 8
u = 1.0
side = 24
samples = 50
"#,
    )
    .unwrap();
    let run = |config: &Path, out: &Path| {
        let o = gff2dlab(&["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    run(&config, first.path());
    let second = tempfile::tempdir().unwrap();
    run(&first.path().join("manifest.json"), second.path());
    let (a, b) = (manifest(first.path()), manifest(second.path()));
    assert_eq!(digests(&a), digests(&b));
    assert_eq!(a["config"], b["config"]);
    for (path, _) in digests(&a) {
        assert_eq!(std::fs::read(first.path().join(&path)).unwrap(), std::fs::read(second.path().join(&path)).unwrap());
    }
}

#[test]
fn failed_expectation_sets_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "[[experiment]]\nkind = \"segcap\"\nname = \"seg\"\nn = 50\n[[experiment.expect]]\nmetric = \"cap\"\nmax = 1.0\n",
    )
    .unwrap();
    let out = gff2dlab(&["run", "--config", config.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("check failed: cap"));
    let m = manifest(dir.path());
    assert_eq!(m["tasks"][0]["checks"][0]["passed"], Value::Bool(false));
}

#[test]
fn invalid_config_is_reported_item_by_item() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[[experiment]]\nkind = \"segcap\"\n[[experiment]]\nkind = \"tube\"\nN = 8\n").unwrap();
    let out = gff2dlab(&["run", "--config", config.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("missing field `n`") && err.contains("missing field `blocks`"), "{err}");
}

#[test]
fn sample_writes_field_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("phi.bin");
    let out = gff2dlab(&["sample", "--N", "4", "--side", "16", "--seed", "3", "--out", target.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sidecar = gff2dlab::io::FieldSidecar::parse(&std::fs::read_to_string(dir.path().join("phi.bin.json")).unwrap()).unwrap();
    let field = gff2dlab::io::decode_field(&std::fs::read(&target).unwrap(), &sidecar).unwrap();
    assert_eq!(field.values.len(), 256);
    assert_eq!(sidecar.seed, 3);
}

#[test]
fn coarsegrain_from_path_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = gff2dlab::paths::straight([0, 0], 440_000.0, 0.4, 1);
    let file = dir.path().join("path.txt");
    std::fs::write(&file, gff2dlab::io::format_points(&path)).unwrap();
    let out = gff2dlab(&[
        "coarsegrain",
        "--path",
        file.to_str().unwrap(),
        "--N",
        "440000",
        "--L",
        "1",
        "--M",
        "100",
        "--depth",
        "1",
        "--R",
        "88000",
        "--verify",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(dir.path());
    assert_eq!(m["tasks"][0]["metrics"]["violations"], serde_json::json!(0.0));
}
