#![no_main]

use editforge::instruct::parse_response;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    match parse_response(text) {
        Ok(fields) => {
            // accepted fields survive a canonical JSON round trip
            let json = serde_json::to_string(&fields).unwrap();
            assert_eq!(parse_response(&json).unwrap(), fields);
        }
        Err(e) => {
            let _ = e.reason.code();
        }
    }
});
