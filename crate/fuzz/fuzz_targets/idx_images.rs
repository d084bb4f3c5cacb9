#![no_main]

use libfuzzer_sys::fuzz_target;
use tgan_core::data;

fuzz_target!(|bytes: &[u8]| {
    if let Ok(img) = data::decode_idx_images(bytes) {
        assert_eq!(img.pixels.len(), img.count * img.rows * img.cols);
        assert_eq!(data::encode_idx_images(&img), bytes);
    }
});
