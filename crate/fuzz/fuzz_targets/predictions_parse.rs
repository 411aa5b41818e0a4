#![no_main]

use libfuzzer_sys::fuzz_target;
use slt_core::harness::{format_predictions, parse_predictions};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(preds) = parse_predictions(text) {
        let again = parse_predictions(&format_predictions(&preds)).expect("formatted predictions parse");
        assert_eq!(again, preds);
    }
});
