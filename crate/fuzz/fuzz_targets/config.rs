#![no_main]

use libfuzzer_sys::fuzz_target;
use tgan_cli::config::RunConfig;

fuzz_target!(|bytes: &[u8]| {
    let Ok(text) = std::str::from_utf8(bytes) else {
        return;
    };
    if let Ok(cfg) = RunConfig::parse(text) {
        let again = RunConfig::parse(&cfg.serialize()).expect("serialized config parses");
        assert_eq!(again.serialize(), cfg.serialize());
    }
});
