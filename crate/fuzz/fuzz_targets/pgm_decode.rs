#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((w, h, raster)) = slt_core::harness::decode_pgm(data) {
        assert_eq!(raster.len(), w * h);
    }
});
