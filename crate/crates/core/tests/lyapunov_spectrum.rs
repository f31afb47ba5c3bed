use netstab_core::channel::{SeededStream, StreamTag};
use netstab_core::dynamics::{linear_system, LorentzParams, SaturatedLorentz};
use netstab_core::lyapunov::{
    estimate_max_exponent, estimate_spectrum, settle_on_attractor, sum_exponents_via_det,
    SpectrumOptions,
};
use netstab_core::{Matrix, State};

fn lti_log_moduli(a: &Matrix) -> Vec<f64> {
    let mut v: Vec<f64> = a
        .complex_eigenvalues()
        .iter()
        .map(|l| l.norm().ln())
        .collect();
    v.sort_by(|x, y| y.total_cmp(x));
    v
}

#[test]
fn random_lti_spectrum_matches_eigenvalues() {
    let mut stream = SeededStream::new(2024, 0, StreamTag::Init);
    for trial in 0..12 {
        let n = 2 + trial % 3;
        let scale = if trial % 2 == 0 { 0.5 } else { 1.0 };
        let a = Matrix::from_fn(n, n, |_, _| scale * stream.standard_normal());
        let sys = linear_system(a.clone(), Matrix::identity(n, n)).unwrap();
        let opts = SpectrumOptions {
            n_steps: 1_000_000,
            burn_in: 2000,
            ..SpectrumOptions::default()
        };
        let s = estimate_spectrum(&sys, &State::zeros(n), &opts).unwrap();
        let oracle = lti_log_moduli(&a);
        for (e, o) in s.exponents.iter().zip(&oracle) {
            assert!(
                (e - o).abs() < 1e-6,
                "trial {trial}: {:?} vs {:?}",
                s.exponents,
                oracle
            );
        }
    }
}

fn lorentz(alpha: f64, beta: f64) -> SaturatedLorentz {
    SaturatedLorentz::new(LorentzParams::new(alpha, beta).unwrap())
}

fn on_attractor(sys: &SaturatedLorentz, seed: u64) -> State {
    let mut stream = SeededStream::new(seed, 0, StreamTag::Init);
    settle_on_attractor(sys, &mut stream, 5.0, 1000, 100).unwrap()
}

#[test]
fn lorentz_top_exponents() {
    let opts = SpectrumOptions::with_steps(100_000);
    let a = lorentz(1.25, 0.75);
    let s = estimate_spectrum(&a, &on_attractor(&a, 1), &opts).unwrap();
    assert!((s.top() - 0.34).abs() < 0.05, "{:?}", s.exponents);
    assert!(s.exponents[1] < 0.0);

    let b = lorentz(2.25, 0.29);
    let s = estimate_spectrum(&b, &on_attractor(&b, 1), &opts).unwrap();
    assert!(
        (s.multipliers[0] - 1.13).abs() < 0.05,
        "{:?}",
        s.multipliers
    );
}

#[test]
fn sum_of_exponents_equals_det_average() {
    for (alpha, beta) in [(1.25, 0.75), (2.25, 0.29)] {
        let sys = lorentz(alpha, beta);
        let x0 = on_attractor(&sys, 7);
        let opts = SpectrumOptions {
            n_steps: 20_000,
            burn_in: 500,
            ..SpectrumOptions::default()
        };
        let s = estimate_spectrum(&sys, &x0, &opts).unwrap();
        let d = sum_exponents_via_det(&sys, &x0, 20_000, 500).unwrap();
        assert!((s.sum() - d).abs() < 1e-10, "{} vs {}", s.sum(), d);
    }
}

#[test]
fn top_exponent_agrees_with_tangent_vector() {
    let sys = lorentz(1.25, 0.75);
    let x0 = on_attractor(&sys, 3);
    let s = estimate_spectrum(&sys, &x0, &SpectrumOptions::with_steps(100_000)).unwrap();
    let m = estimate_max_exponent(&sys, &x0, 100_000, 1000).unwrap();
    assert!((s.top() - m).abs() < 0.01, "{} vs {}", s.top(), m);
}

#[test]
fn spectrum_independent_of_start() {
    let sys = lorentz(1.25, 0.75);
    let opts = SpectrumOptions::with_steps(100_000);
    let tops: Vec<f64> = (0..10)
        .map(|seed| {
            estimate_spectrum(&sys, &on_attractor(&sys, 100 + seed), &opts)
                .unwrap()
                .top()
        })
        .collect();
    let lo = tops.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = tops.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(hi - lo < 0.02, "{tops:?}");
}
