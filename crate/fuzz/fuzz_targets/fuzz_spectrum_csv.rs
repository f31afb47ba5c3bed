#![no_main]

use libfuzzer_sys::fuzz_target;
use netstab_cli::spectrum_csv::parse_spectrum_csv;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(exponents) = parse_spectrum_csv(text) {
        assert!(!exponents.is_empty());
        assert!(exponents.iter().all(|e| e.is_finite()));
    }
});
