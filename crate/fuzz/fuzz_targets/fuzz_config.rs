#![no_main]

use libfuzzer_sys::fuzz_target;
use netstab_cli::config::{parse_config, valid_key};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(map) = parse_config(text) {
        for (k, v) in &map {
            assert!(valid_key(k));
            assert!(!v.contains('#'));
            assert_eq!(v.trim(), v);
        }
    }
});
