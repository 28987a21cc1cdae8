#![no_main]

use cappy::genclient::http::parse_completion_response;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(choices) = parse_completion_response(data) {
        for (_, lp) in choices {
            assert!(lp.iter().flatten().all(|x| x.is_finite() && *x <= 0.0));
        }
    }
});
