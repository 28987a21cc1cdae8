#![no_main]

use cappy::select::parse_candidate_line;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(line) = std::str::from_utf8(data) {
        if let Ok(c) = parse_candidate_line(line) {
            assert!(c.check_logprobs().is_ok());
        }
    }
});
