#![no_main]

use gff2dlab::io::{format_points, parse_points};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(points) = parse_points(text) {
        // Whatever parses must survive a round trip through the writer.
        assert_eq!(parse_points(&format_points(&points)).unwrap(), points);
    }
});
