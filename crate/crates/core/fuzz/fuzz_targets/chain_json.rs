#![no_main]

use jring::calibration::ChainModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(chain) = ChainModel::from_json(text) {
        assert_eq!(ChainModel::from_json(&chain.to_json()).expect("own output parses"), chain);
    }
});
