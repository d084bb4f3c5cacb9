//! Replays the checked-in fuzz seeds through the same checks the fuzz
//! targets make, so a regression shows up without a fuzzing toolchain.

use std::fs;
use std::path::PathBuf;

use tgan_cli::checkpoint;
use tgan_cli::config::RunConfig;
use tgan_core::data;
use tgan_core::Tensor;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.display().to_string(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn idx_seeds() {
    let mut decoded = 0;
    for (name, b) in seeds("idx_images") {
        if let Ok(img) = data::decode_idx_images(&b) {
            assert_eq!(data::encode_idx_images(&img), b, "{name}");
            decoded += 1;
        }
    }
    for (name, b) in seeds("idx_labels") {
        if let Ok(lab) = data::decode_idx_labels(&b) {
            assert_eq!(data::encode_idx_labels(&lab), b, "{name}");
            decoded += 1;
        }
    }
    for (_, b) in seeds("idx_dataset") {
        let (&cut, rest) = b.split_first().unwrap();
        let (i, l) = rest.split_at((cut as usize).min(rest.len()));
        if let Ok(ds) = data::dataset_from_idx(i, l) {
            assert!(ds.samples().data().iter().all(|v| (-1.0..=1.0).contains(v)));
            decoded += 1;
        }
    }
    assert!(decoded >= 5);
}

#[test]
fn checkpoint_seeds() {
    let mut decoded = 0;
    for (name, b) in seeds("checkpoint") {
        if let Ok(records) = checkpoint::decode(&b) {
            let tensors: Vec<Tensor> = records
                .iter()
                .map(|r| Tensor::new([r.data.len()], r.data.clone()).unwrap())
                .collect();
            let pairs: Vec<(String, &Tensor)> = records.iter().zip(&tensors).map(|(r, t)| (r.name.clone(), t)).collect();
            assert_eq!(checkpoint::encode(&pairs), b, "{name}");
            decoded += 1;
        }
    }
    assert!(decoded >= 2);
}

#[test]
fn config_seeds() {
    let mut parsed = 0;
    for (name, b) in seeds("config") {
        let Ok(text) = std::str::from_utf8(&b) else { continue };
        if let Ok(cfg) = RunConfig::parse(text) {
            let again = RunConfig::parse(&cfg.serialize()).unwrap();
            assert_eq!(again.serialize(), cfg.serialize(), "{name}");
            parsed += 1;
        }
    }
    assert!(parsed >= 3);
}
