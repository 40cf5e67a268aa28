#![no_main]

use gff2dlab::coarse_grain::validate_path;
use gff2dlab::io::parse_path;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(path) = parse_path(text) {
        assert!(!path.is_empty());
        let _ = validate_path(&path, 1);
    }
});
