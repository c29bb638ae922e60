#![no_main]
use libfuzzer_sys::fuzz_target;
use qmotion::dataio::parse_mqq;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(table) = parse_mqq(text) {
            assert_eq!(table.magnitudes.dim(), table.cosines.valid.dim());
            assert_eq!(table.cosines.omega.dim().2, 3);
        }
    }
});
