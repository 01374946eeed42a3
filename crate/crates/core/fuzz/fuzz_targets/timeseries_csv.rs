#![no_main]

use jring::hmm::TimeSeries;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ts) = TimeSeries::from_csv(text) {
        let back = TimeSeries::from_csv(&ts.to_csv()).expect("own output parses");
        assert_eq!((back.len(), back.dim()), (ts.len(), ts.dim()));
    }
});
