#![no_main]

use cappy::scorer::remote::{parse_batch_response, parse_score_response};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_score_response(data);
    let _ = parse_batch_response(data);
});
