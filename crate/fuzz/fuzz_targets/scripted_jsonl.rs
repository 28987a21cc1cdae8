#![no_main]

use cappy::genclient::scripted::parse_scripted;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_scripted(text);
    }
});
