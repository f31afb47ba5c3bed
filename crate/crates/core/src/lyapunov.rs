//! Lyapunov exponent estimators along a trajectory of `x_{n+1} = f(x_n)`.
//!
//! Exponents are reported per step: `Lambda = lim (1/n) log sigma_i(J_n ... J_1)`,
//! so an LTI map has exponents `log |lambda_i(A)|`.

use crate::channel::SeededStream;
use crate::dynamics::{check_bounded, DiscreteSystem};
use crate::{Error, Matrix, Result, State};

/// Estimation settings for [`estimate_spectrum`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumOptions {
    pub n_steps: usize,
    /// Steps discarded before accumulating; the tangent frame is still
    /// propagated so it is aligned when accumulation starts.
    pub burn_in: usize,
    pub reorth_every: usize,
    /// Record running exponents every this many steps (0 disables).
    pub record_every: usize,
    /// Convergence threshold on [`LyapunovSpectrum::tail_variation`].
    pub tol: f64,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self {
            n_steps: 1_000_000,
            burn_in: 1000,
            reorth_every: 1,
            record_every: 0,
            tol: 1e-3,
        }
    }
}

impl SpectrumOptions {
    pub fn with_steps(n_steps: usize) -> Self {
        Self {
            n_steps,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovSpectrum {
    /// Sorted descending.
    pub exponents: Vec<f64>,
    /// `exp(exponents[i])`.
    pub multipliers: Vec<f64>,
    pub n_steps: usize,
    pub burn_in: usize,
    /// Largest spread (max - min) of any running exponent over the last 10%
    /// of steps.
    pub tail_variation: f64,
    pub converged: bool,
    /// `(step, running exponents sorted descending)` samples.
    pub history: Vec<(usize, Vec<f64>)>,
}

impl LyapunovSpectrum {
    pub fn top(&self) -> f64 {
        self.exponents[0]
    }

    pub fn sum(&self) -> f64 {
        self.exponents.iter().sum()
    }

    /// Exponents strictly greater than zero.
    pub fn positive(&self) -> impl Iterator<Item = f64> + '_ {
        self.exponents.iter().copied().filter(|&e| e > 0.0)
    }
}

/// QR-factor `m`, returning the orthonormal factor and `|diag(R)|`.
pub(crate) fn reorthonormalize(m: Matrix) -> (Matrix, Vec<f64>) {
    let qr = m.qr();
    let diag = qr.r().diagonal().iter().map(|d| d.abs()).collect();
    (qr.q(), diag)
}

fn advance(system: &dyn DiscreteSystem, x: &State, step: usize) -> Result<State> {
    let next = system.step(x);
    check_bounded(&next, step)?;
    Ok(next)
}

fn sorted_desc(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Full spectrum by propagating an orthonormal frame through the Jacobians
/// and re-factorizing every `reorth_every` steps.
pub fn estimate_spectrum(
    system: &dyn DiscreteSystem,
    x0: &State,
    opts: &SpectrumOptions,
) -> Result<LyapunovSpectrum> {
    if opts.n_steps == 0 || opts.reorth_every == 0 {
        return Err(Error::InvalidParameter(
            "n_steps and reorth_every must be positive".into(),
        ));
    }
    let n = system.dim();
    let mut x = x0.clone();
    check_bounded(&x, 0)?;
    let mut frame = Matrix::identity(n, n);

    for k in 0..opts.burn_in {
        let (q, diag) = reorthonormalize(system.jacobian(&x) * &frame);
        if diag.iter().any(|&d| d == 0.0 || !d.is_finite()) {
            return Err(Error::Degenerate { step: k });
        }
        frame = q;
        x = advance(system, &x, k + 1)?;
    }

    let mut sums = vec![0.0; n];
    let tail_start = opts.n_steps - opts.n_steps / 10;
    let mut tail_lo = vec![f64::INFINITY; n];
    let mut tail_hi = vec![f64::NEG_INFINITY; n];
    let mut history = Vec::new();

    for k in 0..opts.n_steps {
        let step = opts.burn_in + k;
        frame = system.jacobian(&x) * &frame;
        x = advance(system, &x, step + 1)?;

        let done = k + 1;
        if done % opts.reorth_every != 0 && done != opts.n_steps {
            continue;
        }
        let (q, diag) = reorthonormalize(frame);
        frame = q;
        for (s, d) in sums.iter_mut().zip(&diag) {
            if *d == 0.0 || !d.is_finite() {
                return Err(Error::Degenerate { step });
            }
            *s += d.ln();
        }
        if done >= tail_start || (opts.record_every > 0 && done % opts.record_every == 0) {
            let running: Vec<f64> = sums.iter().map(|s| s / done as f64).collect();
            if done >= tail_start {
                for i in 0..n {
                    tail_lo[i] = tail_lo[i].min(running[i]);
                    tail_hi[i] = tail_hi[i].max(running[i]);
                }
            }
            if opts.record_every > 0 && done % opts.record_every == 0 {
                history.push((done, sorted_desc(&running)));
            }
        }
    }

    let exponents = sorted_desc(
        &sums
            .iter()
            .map(|s| s / opts.n_steps as f64)
            .collect::<Vec<_>>(),
    );
    let tail_variation = tail_lo
        .iter()
        .zip(&tail_hi)
        .map(|(lo, hi)| if hi >= lo { hi - lo } else { 0.0 })
        .fold(0.0, f64::max);
    Ok(LyapunovSpectrum {
        multipliers: exponents.iter().map(|e| e.exp()).collect(),
        exponents,
        n_steps: opts.n_steps,
        burn_in: opts.burn_in,
        tail_variation,
        converged: tail_variation < opts.tol,
        history,
    })
}

/// Largest exponent from the norm growth of one renormalized tangent vector.
pub fn estimate_max_exponent(
    system: &dyn DiscreteSystem,
    x0: &State,
    n_steps: usize,
    burn_in: usize,
) -> Result<f64> {
    if n_steps == 0 {
        return Err(Error::InvalidParameter("n_steps must be positive".into()));
    }
    let n = system.dim();
    let mut v = State::from_fn(n, |i, _| (i + 1) as f64);
    v /= v.norm();
    let mut x = x0.clone();
    check_bounded(&x, 0)?;
    for k in 0..burn_in {
        v = system.jacobian(&x) * &v;
        let g = v.norm();
        if g == 0.0 || !g.is_finite() {
            return Err(Error::Degenerate { step: k });
        }
        v /= g;
        x = advance(system, &x, k + 1)?;
    }
    let mut total = 0.0;
    for k in 0..n_steps {
        v = system.jacobian(&x) * &v;
        let g = v.norm();
        if g == 0.0 || !g.is_finite() {
            return Err(Error::Degenerate { step: burn_in + k });
        }
        total += g.ln();
        v /= g;
        x = advance(system, &x, burn_in + k + 1)?;
    }
    Ok(total / n_steps as f64)
}

/// `(1/n) sum log |det J(x_k)|`, which equals the sum of all exponents.
pub fn sum_exponents_via_det(
    system: &dyn DiscreteSystem,
    x0: &State,
    n_steps: usize,
    burn_in: usize,
) -> Result<f64> {
    if n_steps == 0 {
        return Err(Error::InvalidParameter("n_steps must be positive".into()));
    }
    let mut x = x0.clone();
    check_bounded(&x, 0)?;
    for k in 0..burn_in {
        x = advance(system, &x, k + 1)?;
    }
    let mut total = 0.0;
    for k in 0..n_steps {
        let det = system.jacobian(&x).determinant();
        if det == 0.0 || !det.is_finite() {
            return Err(Error::Degenerate { step: burn_in + k });
        }
        total += det.abs().ln();
        x = advance(system, &x, burn_in + k + 1)?;
    }
    Ok(total / n_steps as f64)
}

/// Iterate from random points in the ball of `radius` until one survives
/// `warmup` steps; returns the final state, which lies on the attractor.
pub fn settle_on_attractor(
    system: &dyn DiscreteSystem,
    stream: &mut SeededStream,
    radius: f64,
    warmup: usize,
    max_tries: usize,
) -> Result<State> {
    let mut last_err = Error::Diverged { step: 0 };
    for _ in 0..max_tries.max(1) {
        let mut x = stream.uniform_in_ball(system.dim(), radius);
        let mut ok = true;
        for k in 0..warmup {
            match advance(system, &x, k + 1) {
                Ok(next) => x = next,
                Err(e) => {
                    last_err = e;
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok(x);
        }
    }
    Err(last_err)
}
