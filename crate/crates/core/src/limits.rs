//! Necessary conditions on the non-erasure probability: critical values from
//! the origin eigenvalues (local instability) and from the Lyapunov exponents
//! of the attractor (global instability).

use crate::dynamics::DiscreteSystem;
use crate::linalg::eigen_moduli;
use crate::lyapunov::LyapunovSpectrum;
use crate::{Error, Matrix, Result, State};

/// Moduli at or below `1 + UNSTABLE_SLACK` do not count as unstable.
pub const UNSTABLE_SLACK: f64 = 1e-9;
/// `p*_lya` must beat `p*_eig` by more than this to count as global.
pub const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `1 <= d < N`
    FewInputs,
    /// `d = N`
    FullInputs,
}

impl Regime {
    pub fn classify(d: usize, n: usize) -> Result<Self> {
        match d {
            0 => Err(Error::InvalidParameter(
                "input count d must be at least 1".into(),
            )),
            d if d < n => Ok(Regime::FewInputs),
            d if d == n => Ok(Regime::FullInputs),
            _ => Err(Error::InvalidParameter(format!(
                "input count d = {d} exceeds state dimension {n}"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::FewInputs => "few-inputs",
            Regime::FullInputs => "full-inputs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dominant {
    Local,
    Global,
}

impl Dominant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Dominant::Local => "local",
            Dominant::Global => "global",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QosReport {
    pub p_star_eig: f64,
    pub p_star_lya: f64,
    pub p_star: f64,
    pub dominant: Dominant,
    pub d: usize,
    pub regime: Regime,
    /// Product of the unstable origin eigen-moduli.
    pub inputs_product_eig: f64,
    /// Product of `exp(Lambda)` over the positive exponents.
    pub inputs_product_lya: f64,
}

fn check_unstable(moduli: &[f64]) -> Result<()> {
    if moduli.is_empty() {
        return Err(Error::InvalidParameter(
            "at least one eigen-modulus is required".into(),
        ));
    }
    match moduli.iter().find(|&&m| !m.is_finite() || m <= 1.0) {
        Some(m) => Err(Error::InvalidParameter(format!(
            "eigen-modulus {m} is not strictly unstable"
        ))),
        None => Ok(()),
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if (0.0..=1.0).contains(&rho) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "rho = {rho} outside [0, 1]"
        )))
    }
}

/// The quantity that must stay below one: `prod m^2` for few inputs,
/// `max m^2` for full inputs.
fn growth(moduli: &[f64], regime: Regime) -> f64 {
    match regime {
        Regime::FewInputs => moduli.iter().map(|m| m * m).product(),
        Regime::FullInputs => moduli.iter().fold(1.0f64, |acc, m| acc.max(m * m)),
    }
}

fn loss_factor(rho: f64, d: usize, regime: Regime) -> f64 {
    match regime {
        Regime::FewInputs => (1.0 - rho).powi(d as i32),
        Regime::FullInputs => 1.0 - rho,
    }
}

/// Smallest `rho` with `loss_factor(rho) * growth < 1`.
fn critical_from_growth(growth: f64, d: usize, regime: Regime) -> f64 {
    if growth <= 1.0 {
        return 0.0;
    }
    match regime {
        Regime::FewInputs => 1.0 - growth.powf(-1.0 / d as f64),
        Regime::FullInputs => 1.0 - 1.0 / growth,
    }
}

/// Necessary condition for an LTI plant whose eigenvalues are all unstable.
pub fn linear_necessary(eig_moduli: &[f64], d: usize, n: usize, rho: f64) -> Result<bool> {
    check_unstable(eig_moduli)?;
    check_rho(rho)?;
    let regime = Regime::classify(d, n)?;
    Ok(loss_factor(rho, d, regime) * growth(eig_moduli, regime) < 1.0)
}

/// Critical `rho` below which [`linear_necessary`] fails.
pub fn critical_rho_linear(eig_moduli: &[f64], d: usize, n: usize) -> Result<f64> {
    check_unstable(eig_moduli)?;
    let regime = Regime::classify(d, n)?;
    Ok(critical_from_growth(growth(eig_moduli, regime), d, regime))
}

/// Outcome of the two halves of the nonlinear necessary condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NecessaryVerdict {
    /// Condition on the origin eigenvalues.
    pub eig: bool,
    /// Condition on the positive Lyapunov exponents.
    pub lya: bool,
}

impl NecessaryVerdict {
    pub fn holds(&self) -> bool {
        self.eig && self.lya
    }
}

fn unstable_moduli(origin_jacobian: &Matrix) -> Vec<f64> {
    let mut out = Vec::new();
    for m in eigen_moduli(origin_jacobian) {
        if m > 1.0 + UNSTABLE_SLACK {
            out.push(m);
        } else {
            log::warn!("origin eigen-modulus {m} is not unstable; excluded from the product");
        }
    }
    out
}

fn positive_multipliers(spectrum: &LyapunovSpectrum) -> Vec<f64> {
    spectrum.positive().map(f64::exp).collect()
}

/// Evaluates the nonlinear necessary condition separately for the origin
/// eigenvalues and the positive Lyapunov exponents.
pub fn nonlinear_necessary(
    spectrum: &LyapunovSpectrum,
    origin_jacobian: &Matrix,
    d: usize,
    rho: f64,
) -> Result<NecessaryVerdict> {
    check_rho(rho)?;
    let n = origin_jacobian.nrows();
    let regime = Regime::classify(d, n)?;
    let eig = unstable_moduli(origin_jacobian);
    let lya = positive_multipliers(spectrum);
    if eig.is_empty() && lya.is_empty() {
        return Err(Error::NoUnstableDirections);
    }
    let loss = loss_factor(rho, d, regime);
    let lya_growth = match regime {
        Regime::FewInputs => growth(&lya, regime),
        Regime::FullInputs => lya.first().map_or(1.0, |m| m * m),
    };
    Ok(NecessaryVerdict {
        eig: loss * growth(&eig, regime) < 1.0,
        lya: loss * lya_growth < 1.0,
    })
}

/// Critical probabilities for `system` from its origin Jacobian and a
/// previously estimated spectrum.
pub fn qos_report(system: &dyn DiscreteSystem, spectrum: &LyapunovSpectrum) -> Result<QosReport> {
    let n = system.dim();
    let d = system.input_dim();
    let regime = Regime::classify(d, n)?;
    if !spectrum.converged {
        log::warn!(
            "Lyapunov spectrum not converged (tail variation {:e})",
            spectrum.tail_variation
        );
    }
    let eig = unstable_moduli(&system.jacobian(&State::zeros(n)));
    let lya = positive_multipliers(spectrum);
    if eig.is_empty() && lya.is_empty() {
        return Err(Error::NoUnstableDirections);
    }
    let lya_growth = match regime {
        Regime::FewInputs => growth(&lya, regime),
        Regime::FullInputs => lya.first().map_or(1.0, |m| m * m),
    };
    let p_star_eig = critical_from_growth(growth(&eig, regime), d, regime);
    let p_star_lya = critical_from_growth(lya_growth, d, regime);
    let (p_star, dominant) = if p_star_lya > p_star_eig + TIE_TOL {
        (p_star_lya, Dominant::Global)
    } else {
        (p_star_eig, Dominant::Local)
    };
    Ok(QosReport {
        p_star_eig,
        p_star_lya,
        p_star,
        dominant,
        d,
        regime,
        inputs_product_eig: eig.iter().product(),
        inputs_product_lya: lya.iter().product(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_rows;
    use proptest::prelude::*;

    fn spectrum(exponents: &[f64]) -> LyapunovSpectrum {
        LyapunovSpectrum {
            exponents: exponents.to_vec(),
            multipliers: exponents.iter().map(|e| e.exp()).collect(),
            n_steps: 1,
            burn_in: 0,
            tail_variation: 0.0,
            converged: true,
            history: Vec::new(),
        }
    }

    #[test]
    fn linear_examples() {
        assert!(linear_necessary(&[2.0], 1, 1, 0.8).unwrap());
        assert!(!linear_necessary(&[2.0], 1, 1, 0.75).unwrap());
        assert!(linear_necessary(&[2.0, 1.5], 2, 2, 0.8).unwrap());
        assert!((critical_rho_linear(&[2f64.sqrt()], 1, 1).unwrap() - 0.5).abs() < 1e-15);
        assert!((critical_rho_linear(&[1.65], 1, 2).unwrap() - 0.6327).abs() < 1e-4);
        assert!((critical_rho_linear(&[1.08], 1, 2).unwrap() - 0.1427).abs() < 1e-4);
        assert!((critical_rho_linear(&[2.0, 1.5], 2, 2).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn linear_rejects_bad_input() {
        assert!(linear_necessary(&[1.0], 1, 1, 0.5).is_err());
        assert!(linear_necessary(&[0.5, 2.0], 1, 2, 0.5).is_err());
        assert!(linear_necessary(&[2.0], 2, 1, 0.5).is_err());
        assert!(linear_necessary(&[2.0], 0, 1, 0.5).is_err());
        assert!(linear_necessary(&[2.0], 1, 1, 1.5).is_err());
        assert!(critical_rho_linear(&[], 1, 1).is_err());
    }

    #[test]
    fn d_th_root_form() {
        let p = critical_rho_linear(&[2.0, 3.0, 1.5], 2, 3).unwrap();
        assert!((p - (1.0 - (4.0f64 * 9.0 * 2.25).powf(-0.5))).abs() < 1e-15);
    }

    fn lorentz_origin(det: f64) -> Matrix {
        // rotation-scaled block with |lambda|^2 = det
        let r = det.sqrt();
        from_rows(&[&[r * 0.6, -r * 0.8], &[r * 0.8, r * 0.6]])
    }

    #[test]
    fn nonlinear_examples() {
        let a = lorentz_origin(1.65);
        let s = spectrum(&[1.40f64.ln(), -0.3]);
        assert_eq!(
            nonlinear_necessary(&s, &a, 1, 0.7).unwrap(),
            NecessaryVerdict {
                eig: true,
                lya: true
            }
        );
        assert!(!nonlinear_necessary(&s, &a, 1, 0.55).unwrap().eig);

        let a = lorentz_origin(1.08);
        let s = spectrum(&[1.13f64.ln(), -0.2]);
        let v = nonlinear_necessary(&s, &a, 1, 0.18).unwrap();
        assert!(v.eig && !v.lya && !v.holds());
    }

    #[test]
    fn no_unstable_directions() {
        let a = from_rows(&[&[0.5, 0.0], &[0.0, 0.2]]);
        let s = spectrum(&[-0.1, -0.5]);
        assert_eq!(
            nonlinear_necessary(&s, &a, 1, 0.5),
            Err(Error::NoUnstableDirections)
        );
    }

    #[test]
    fn rounding_noise_does_not_flip_dominant_side() {
        let sys = crate::dynamics::linear_system(
            Matrix::from_element(1, 1, 2.0),
            Matrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let q = qos_report(&sys, &spectrum(&[2f64.ln() + 1e-12])).unwrap();
        assert_eq!(q.dominant, Dominant::Local);
        assert_eq!(q.p_star, 0.75);
        let q = qos_report(&sys, &spectrum(&[2f64.ln() + 1e-3])).unwrap();
        assert_eq!(q.dominant, Dominant::Global);
    }

    #[test]
    fn complex_pair_matches_real_pair() {
        let complex = lorentz_origin(2.0 * 1.5 * 2.0 * 1.5);
        let real = from_rows(&[&[3.0, 0.0], &[0.0, -3.0]]);
        let s = spectrum(&[-1.0, -2.0]);
        for rho in [0.5, 0.9, 0.95, 0.99] {
            assert_eq!(
                nonlinear_necessary(&s, &complex, 1, rho).unwrap(),
                nonlinear_necessary(&s, &real, 1, rho).unwrap()
            );
        }
    }

    proptest! {
        #[test]
        fn threshold_is_strict_boundary(moduli in prop::collection::vec(1.01f64..4.0, 1..4), d_off in 0usize..3) {
            let n = moduli.len();
            let d = 1 + d_off % n;
            let p = critical_rho_linear(&moduli, d, n).unwrap();
            prop_assert!((0.0..1.0).contains(&p));
            prop_assert!(!linear_necessary(&moduli, d, n, (p - 1e-9).max(0.0)).unwrap());
            prop_assert!(linear_necessary(&moduli, d, n, (p + 1e-9).min(1.0)).unwrap());
        }

        #[test]
        fn threshold_is_monotone(moduli in prop::collection::vec(1.01f64..4.0, 1..4), bump in 0.0f64..1.0, idx in 0usize..4) {
            let n = moduli.len();
            for d in 1..=n {
                let base = critical_rho_linear(&moduli, d, n).unwrap();
                let mut bigger = moduli.clone();
                bigger[idx % n] += bump;
                prop_assert!(critical_rho_linear(&bigger, d, n).unwrap() >= base);
            }
        }
    }
}
