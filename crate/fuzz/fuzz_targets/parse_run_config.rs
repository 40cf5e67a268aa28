#![no_main]

use std::path::Path;

use gff2dlab::experiments::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    // Point files referenced by the config resolve against a directory that
    // does not exist, so parsing never touches the disk.
    let _ = RunConfig::parse(text, Path::new("/nonexistent"));
    let _ = RunConfig::from_manifest(text);
});
