#![no_main]

use cappy::scorer::parse_score_request;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(line) = std::str::from_utf8(data) {
        let _ = parse_score_request(line);
    }
});
