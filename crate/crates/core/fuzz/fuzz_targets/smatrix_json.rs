#![no_main]

use jring::scattering::ScatteringMatrix;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(list) = ScatteringMatrix::list_from_json(text) {
        for m in list {
            assert_eq!(ScatteringMatrix::from_json(&m.to_json()).expect("own output parses"), m);
        }
    }
});
