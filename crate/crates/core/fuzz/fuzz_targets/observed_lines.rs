#![no_main]

use jring::fit::ObservedLines;
use jring::spectrum::SweepAxis;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(obs) = ObservedLines::from_csv(SweepAxis::Flux, text) {
        let back = ObservedLines::from_csv(SweepAxis::Flux, &obs.to_csv()).expect("own output parses");
        assert_eq!(back.len(), obs.len());
    }
});
