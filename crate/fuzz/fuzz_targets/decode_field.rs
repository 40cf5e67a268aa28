#![no_main]

use gff2dlab::io::{decode_field, encode_field, FieldSidecar};
use libfuzzer_sys::fuzz_target;

// Input layout: sidecar JSON, one NUL byte, raw field bytes.
fuzz_target!(|data: &[u8]| {
    let Some(split) = data.iter().position(|&b| b == 0) else { return };
    let Ok(text) = std::str::from_utf8(&data[..split]) else { return };
    let Ok(sidecar) = FieldSidecar::parse(text) else { return };
    let bytes = &data[split + 1..];
    if let Ok(field) = decode_field(bytes, &sidecar) {
        assert_eq!(encode_field(&field.values), bytes);
    }
});
