#![no_main]

use libfuzzer_sys::fuzz_target;
use tgan_core::data;

// First byte splits the input into an image blob and a label blob.
fuzz_target!(|bytes: &[u8]| {
    let Some((&cut, rest)) = bytes.split_first() else {
        return;
    };
    let (images, labels) = rest.split_at((cut as usize).min(rest.len()));
    if let Ok(ds) = data::dataset_from_idx(images, labels) {
        assert!(ds.samples().data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(ds.labels().iter().all(|&l| l < ds.num_classes()));
    }
});
