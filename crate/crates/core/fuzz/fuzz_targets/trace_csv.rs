#![no_main]

use jring::fit::{extract_dips, parse_trace_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(trace) = parse_trace_csv(text) {
        if let Ok(dips) = extract_dips(&trace, 1.0, 8) {
            assert!(dips.len() <= 8);
        }
    }
});
