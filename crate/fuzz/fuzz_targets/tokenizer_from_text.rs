#![no_main]

use libfuzzer_sys::fuzz_target;
use slt_core::translation::Tokenizer;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(tok) = Tokenizer::from_text(text) {
        assert_eq!(Tokenizer::from_text(&tok.to_text()).expect("round trip"), tok);
    }
});
