//! Replays the checked-in fuzz seeds through the same entry points the fuzz
//! targets use, so a broken seed shows up without a fuzzing toolchain.

use std::fs;
use std::path::{Path, PathBuf};

use gff2dlab::experiments::{parse_grid_config, RunConfig};
use gff2dlab::io::{decode_field, format_points, parse_path, parse_points, FieldSidecar};

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| (p.clone(), fs::read(p).unwrap()))
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).unwrap()
}

#[test]
fn point_seeds_round_trip() {
    for (path, bytes) in seeds("parse_points") {
        let points = parse_points(text(&bytes)).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(parse_points(&format_points(&points)).unwrap(), points);
    }
}

#[test]
fn path_seeds_parse() {
    for (path, bytes) in seeds("parse_path") {
        assert!(!parse_path(text(&bytes)).unwrap().is_empty(), "{}", path.display());
    }
}

#[test]
fn config_seeds_parse() {
    for (path, bytes) in seeds("parse_grid_config") {
        parse_grid_config(text(&bytes)).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
    for (path, bytes) in seeds("parse_run_config") {
        let t = text(&bytes);
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            RunConfig::from_manifest(t)
        } else {
            RunConfig::parse(t, path.parent().unwrap())
        };
        parsed.unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

#[test]
fn field_seeds_decode() {
    for (path, bytes) in seeds("decode_field") {
        let split = bytes.iter().position(|&b| b == 0).unwrap();
        let sidecar = FieldSidecar::parse(text(&bytes[..split])).unwrap();
        let field = decode_field(&bytes[split + 1..], &sidecar).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(field.values.len(), sidecar.rows * sidecar.cols);
    }
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/seeds");
    let sidecar = FieldSidecar::parse(&fs::read_to_string(dir.join("field.bin.json")).unwrap()).unwrap();
    decode_field(&fs::read(dir.join("field.bin")).unwrap(), &sidecar).unwrap();
}
