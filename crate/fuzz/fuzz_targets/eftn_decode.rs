#![no_main]

use editforge::dump::{decode, encode};
use libfuzzer_sys::fuzz_target;

// Decoding is strict, so anything accepted must re-encode to the same bytes.
fuzz_target!(|data: &[u8]| {
    if let Ok(t) = decode(data) {
        assert_eq!(encode(&t), data);
    }
});
