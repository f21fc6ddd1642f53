//! Fuzzes the SRFT tensor decoder: shape headers are attacker-controlled, so
//! the decoder must bound every allocation by the actual byte count.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(tensor) = srf::io::tensor::decode_tensor(data) {
        let encoded = srf::io::tensor::encode_tensor(&tensor);
        // Decoding is strict, so a decodable input round-trips exactly.
        assert_eq!(encoded, data, "decode/encode round trip must be exact");
    }
});
