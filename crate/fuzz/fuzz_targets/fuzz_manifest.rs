#![no_main]

use libfuzzer_sys::fuzz_target;
use netstab_cli::manifest::RunManifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(m) = RunManifest::parse(text) {
        // values may hold anything but a newline, so rendering must round-trip
        assert_eq!(RunManifest::parse(&m.render()).as_ref(), Ok(&m));
    }
});
