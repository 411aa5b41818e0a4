#![no_main]

use libfuzzer_sys::fuzz_target;
use slt_core::substrate::{Checkpoint, ParamStore};

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::decode(data) {
        let again = Checkpoint::decode(&ck.encode()).expect("re-encoded checkpoint decodes");
        assert_eq!(again.encode(), ck.encode());
        let _ = ParamStore::from_checkpoint(&ck);
        let _ = slt_core::translation::load_tokenizer(&ck);
    }
});
