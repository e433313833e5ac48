#![no_main]

use editforge::instruct::parse::normalize_single_quotes;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let out = normalize_single_quotes(text);
    if !text.contains('\'') {
        // only single-quoted strings are rewritten
        if let Some(out) = out {
            assert_eq!(out, text);
        }
    }
});
