#![no_main]

use jring::hmm::HmmModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = HmmModel::from_json(text) {
        let back = HmmModel::from_json(&model.to_json()).expect("own output parses");
        assert_eq!(back.n_states(), model.n_states());
    }
});
