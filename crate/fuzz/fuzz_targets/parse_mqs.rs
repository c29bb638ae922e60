//! MQS text must either fail with a positioned error or survive a
//! write/parse round trip bit for bit.

#![no_main]
use libfuzzer_sys::fuzz_target;
use qmotion::dataio::{parse_mqs, write_mqs};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(seq) = parse_mqs(text) {
        let written = write_mqs(&seq.sequence, seq.action.as_deref());
        let again = parse_mqs(&written).expect("written MQS parses");
        assert_eq!(again, seq);
        assert_eq!(write_mqs(&again.sequence, again.action.as_deref()), written);
    }
});
