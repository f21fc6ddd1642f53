//! Fuzzes the JSON run-configuration parser, including the dotted-path
//! override mechanism, which rewrites the parsed document in place.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = srf::io::config::parse_config(text);

    // Splitting the input in half exercises overrides against arbitrary
    // documents: first half as the document, second half as one override.
    let mid = text.len() / 2;
    if let Some((doc, tail)) = text.split_at_checked(mid) {
        if let Some((key, value)) = tail.split_once('=') {
            let overrides = [(key.to_string(), value.to_string())];
            let _ = srf::io::config::parse_config_with_overrides(doc, &overrides);
        }
    }
});
