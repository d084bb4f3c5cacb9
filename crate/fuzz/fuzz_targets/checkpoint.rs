#![no_main]

use libfuzzer_sys::fuzz_target;
use tgan_cli::checkpoint;
use tgan_core::Tensor;

fuzz_target!(|bytes: &[u8]| {
    if let Ok(records) = checkpoint::decode(bytes) {
        let tensors: Vec<Tensor> = records
            .iter()
            .map(|r| Tensor::new([r.data.len()], r.data.clone()).expect("1-d shape"))
            .collect();
        let pairs: Vec<(String, &Tensor)> = records.iter().zip(&tensors).map(|(r, t)| (r.name.clone(), t)).collect();
        assert_eq!(checkpoint::encode(&pairs), bytes);
    }
});
