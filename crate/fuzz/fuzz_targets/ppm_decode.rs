//! Fuzzes the binary PPM reader: the header grammar (comments, whitespace,
//! ASCII integers) and the pixel payload are both attacker-controlled.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(image) = srf::io::ppm::decode_ppm(data) {
        // Every stored sample must already be normalized into [0, 1].
        for v in 0..image.height {
            for u in 0..image.width {
                for c in image.pixel(u, v) {
                    assert!((0.0..=1.0).contains(&c));
                }
            }
        }
    }
});
