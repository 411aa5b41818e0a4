#![no_main]

use libfuzzer_sys::fuzz_target;
use slt_core::harness::TrainConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = TrainConfig::parse(text) {
        let canon = cfg.canonical_text();
        assert_eq!(TrainConfig::parse(&canon).expect("canonical text parses").canonical_text(), canon);
        let _ = cfg.validate();
    }
});
