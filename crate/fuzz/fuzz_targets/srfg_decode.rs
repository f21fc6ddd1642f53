//! Fuzzes the SRFG checkpoint decoder: arbitrary bytes must produce either a
//! model or a typed error, never a panic, hang, or unbounded allocation.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(loaded) = srf::io::checkpoint::decode_checkpoint(data) {
        // A successfully decoded model must re-encode cleanly; this also
        // keeps the round-trip path under fuzz pressure.
        let _ = srf::io::checkpoint::encode_checkpoint(&loaded.model);
    }
});
