#![no_main]

use cappy::{rouge_l, tokenize};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    let (a, b) = text.split_at(text.char_indices().nth(text.chars().count() / 2).map_or(0, |(i, _)| i));
    let s = rouge_l(a, b);
    assert!((0.0..=1.0).contains(&s.f1));
    assert_eq!(s.lcs_len, rouge_l(b, a).lcs_len);
    let _ = tokenize(&text);
});
