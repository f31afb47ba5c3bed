#![no_main]

use libfuzzer_sys::fuzz_target;
use netstab_cli::matrix::{parse_matrix, parse_vector};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(m) = parse_matrix(text) {
        assert!(m.nrows() > 0 && m.ncols() > 0);
        assert!(m.iter().all(|v| v.is_finite()));
    }
    if let Ok(v) = parse_vector(text) {
        assert!(!v.is_empty());
    }
});
