//! Runs the checked-in fuzz corpus and random inputs through every parser
//! with the same invariants the fuzz targets assert.

use std::fs;
use std::path::PathBuf;

use netstab_cli::config::{parse_config, valid_key};
use netstab_cli::manifest::RunManifest;
use netstab_cli::matrix::{parse_matrix, parse_vector};
use netstab_cli::spectrum_csv::parse_spectrum_csv;
use proptest::prelude::*;

fn check_config(text: &str) -> bool {
    match parse_config(text) {
        Ok(map) => {
            for (k, v) in &map {
                assert!(valid_key(k), "{k:?}");
                assert!(!v.contains('#') && v.trim() == v, "{v:?}");
            }
            true
        }
        Err(_) => false,
    }
}

fn check_matrix(text: &str) -> bool {
    let ok = match parse_matrix(text) {
        Ok(m) => {
            assert!(m.nrows() > 0 && m.ncols() > 0);
            assert!(m.iter().all(|v| v.is_finite()));
            true
        }
        Err(_) => false,
    };
    if let Ok(v) = parse_vector(text) {
        assert!(ok && !v.is_empty());
    }
    ok
}

fn check_manifest(text: &str) -> bool {
    match RunManifest::parse(text) {
        Ok(m) => {
            assert_eq!(RunManifest::parse(&m.render()).as_ref(), Ok(&m));
            true
        }
        Err(_) => false,
    }
}

fn check_spectrum(text: &str) -> bool {
    match parse_spectrum_csv(text) {
        Ok(e) => {
            assert!(!e.is_empty() && e.iter().all(|x| x.is_finite()));
            true
        }
        Err(_) => false,
    }
}

fn corpus(target: &str) -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<(String, String)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            (
                path.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read_to_string(&path).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

type Check = fn(&str) -> bool;

#[test]
fn corpus_seeds_hold_invariants() {
    let targets: [(&str, Check); 4] = [
        ("fuzz_config", check_config),
        ("fuzz_matrix", check_matrix),
        ("fuzz_manifest", check_manifest),
        ("fuzz_spectrum_csv", check_spectrum),
    ];
    for (target, check) in targets {
        let seeds = corpus(target);
        assert!(!seeds.is_empty(), "{target} has no seeds");
        let accepted = seeds.iter().filter(|(_, text)| check(text)).count();
        // every corpus has both valid and invalid seeds
        assert!(
            accepted > 0 && accepted < seeds.len(),
            "{target}: {accepted} of {} accepted",
            seeds.len()
        );
    }
}

#[test]
fn corpus_expectations() {
    let by_name = |target: &str, name: &str| {
        corpus(target)
            .into_iter()
            .find(|(n, _)| n == name)
            .unwrap()
            .1
    };
    let m = parse_matrix(&by_name("fuzz_matrix", "commas.txt")).unwrap();
    assert_eq!((m.nrows(), m.ncols()), (2, 2));
    assert!(parse_matrix(&by_name("fuzz_matrix", "extremes.txt")).is_err());
    assert!(RunManifest::parse(&by_name("fuzz_manifest", "traversal.txt")).is_err());
    assert!(RunManifest::parse(&by_name("fuzz_manifest", "overflow.txt")).is_err());
    assert_eq!(
        parse_spectrum_csv(&by_name("fuzz_spectrum_csv", "series.csv")).unwrap(),
        vec![0.34, -0.29]
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn parsers_never_panic(text in "\\PC{0,200}") {
        check_config(&text);
        check_matrix(&text);
        check_manifest(&text);
        check_spectrum(&text);
    }

    #[test]
    fn structured_noise_never_panics(
        text in "[a-z0-9=#;,.\\-+e \\n\\r\\t]{0,120}",
        prefix in prop::sample::select(vec![
            "", "command=x\nversion=1\nmaster_seed=1\nduration_ms=2\n",
            "index,exponent,multiplier\n", "step,exp1,exp2\n",
        ]),
    ) {
        let text = format!("{prefix}{text}");
        check_config(&text);
        check_matrix(&text);
        check_manifest(&text);
        check_spectrum(&text);
    }
}
