#![no_main]

use libfuzzer_sys::fuzz_target;
use tgan_core::data;

fuzz_target!(|bytes: &[u8]| {
    if let Ok(lab) = data::decode_idx_labels(bytes) {
        assert_eq!(data::encode_idx_labels(&lab), bytes);
    }
});
