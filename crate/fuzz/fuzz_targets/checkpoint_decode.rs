#![no_main]

use cappy::scorer::checkpoint::{decode, encode};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = decode(data) {
        let re = encode(&ck.model, ck.optimizer.as_ref());
        assert_eq!(re.as_slice(), data);
        assert!(ck.model.is_finite());
    }
});
