#![no_main]

use cappy::corpus;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(line) = std::str::from_utf8(data) {
        if let Ok(ex) = corpus::parse_regression_line(line) {
            assert!((0.0..=1.0).contains(&ex.score));
        }
    }
});
