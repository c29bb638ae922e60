#![no_main]
use libfuzzer_sys::fuzz_target;
use qmotion::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::decode(data) {
        let bytes = ck.encode();
        let again = Checkpoint::decode(&bytes).expect("encoded checkpoint decodes");
        assert_eq!(again.encode(), bytes);
    }
});
