#![no_main]
use libfuzzer_sys::fuzz_target;
use qmotion::dataio::{parse_mask_sidecar, write_mask_sidecar};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(mask) = parse_mask_sidecar(text) {
        let again = parse_mask_sidecar(&write_mask_sidecar(&mask)).expect("written sidecar parses");
        assert_eq!(again, mask);
    }
});
