//! Accepted configurations are valid and reproduce themselves through
//! their canonical text form.

#![no_main]
use libfuzzer_sys::fuzz_target;
use qmotion::TrainConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = TrainConfig::from_text(text) {
        let canonical = cfg.to_text();
        let again = TrainConfig::from_text(&canonical).expect("canonical text parses");
        assert_eq!(again.to_text(), canonical);
    }
});
