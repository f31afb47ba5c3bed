//! Riccati machinery: the equilibrium DARE, the backward recursion along a
//! trajectory, the optimal tangent gain and the sufficient-condition check.

use rayon::prelude::*;

use crate::channel::ChannelModel;
use crate::dynamics::{check_bounded, DiscreteSystem};
use crate::linalg::{is_stabilizable, spd_inverse, symmetric_extremes, symmetrize};
use crate::{Error, Matrix, Result, State};

/// Iterates whose Frobenius norm passes this are treated as divergent.
pub const DARE_DIVERGENCE: f64 = 1e12;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p: Matrix,
    pub residual: f64,
    pub iterations: usize,
}

/// `A'PA - A'PB (I + B'PB)^{-1} B'PA + R`, evaluated in the equivalent form
/// `(A + BK)'P(A + BK) + K'K + R` with `K = -(I + B'PB)^{-1} B'PA`, which
/// stays positive semidefinite under rounding.
fn riccati_map(a: &Matrix, b: &Matrix, p: &Matrix, r: &Matrix) -> Result<Matrix> {
    let d = b.ncols();
    let bp = b.transpose() * p;
    let inv = spd_inverse(&(&bp * b + Matrix::identity(d, d)), "I + B'PB")?;
    let k = -(inv * bp * a);
    let closed = a + b * &k;
    Ok(symmetrize(
        &(closed.transpose() * p * &closed + k.transpose() * &k + r),
    ))
}

fn check_square(m: &Matrix, n: usize, what: &str) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::Shape(format!(
            "{what} must be {n}x{n}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Fixed-point iteration of the DARE from `P_0 = I` until the defect
/// `||RHS(P) - P||_F` drops below `tol`.
pub fn solve_dare(
    a: &Matrix,
    b: &Matrix,
    r: &Matrix,
    tol: f64,
    max_iter: usize,
) -> Result<RiccatiSolution> {
    let n = a.nrows();
    check_square(a, n, "A")?;
    check_square(r, n, "R")?;
    if b.nrows() != n {
        return Err(Error::Shape(format!(
            "B must have {n} rows, got {}",
            b.nrows()
        )));
    }
    if symmetric_extremes(r).0 < -1e-12 {
        return Err(Error::InvalidParameter(
            "R must be positive semidefinite".into(),
        ));
    }
    if !is_stabilizable(a, b) {
        return Err(Error::NotStabilizable);
    }

    let mut p = Matrix::identity(n, n);
    let mut prev_residual = f64::INFINITY;
    for it in 0..max_iter {
        let next = riccati_map(a, b, &p, r)?;
        let residual = (&next - &p).norm();
        if !residual.is_finite() || next.norm() > DARE_DIVERGENCE {
            return Err(Error::NotStabilizable);
        }
        if residual < tol {
            return Ok(RiccatiSolution {
                p,
                residual,
                iterations: it,
            });
        }
        if it > 10 && residual > prev_residual {
            log::debug!(
                "DARE residual increased at iteration {it}: {prev_residual:e} -> {residual:e}"
            );
        }
        prev_residual = residual;
        p = next;
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: prev_residual,
    })
}

/// Tangent gain `-(mu / (mu^2 + sigma^2)) (B'PB)^{-1} B'PA`, a `d x N` matrix.
pub fn optimal_gain(
    p_next: &Matrix,
    a: &Matrix,
    b: &Matrix,
    model: &ChannelModel,
) -> Result<Matrix> {
    let scale = model.gain_scale();
    if scale == 0.0 {
        return Ok(Matrix::zeros(b.ncols(), a.ncols()));
    }
    let bp = b.transpose() * p_next;
    let inv = spd_inverse(&(&bp * b), "B'PB")?;
    Ok(inv * bp * a * -scale)
}

/// `E_xi[(A + xi B K)' P (A + xi B K)]` for a channel with the given moments.
pub fn expected_closed_loop_cost(
    p: &Matrix,
    a: &Matrix,
    b: &Matrix,
    k: &Matrix,
    model: &ChannelModel,
) -> Matrix {
    let bk = b * k;
    let cross = a.transpose() * p * &bk;
    a.transpose() * p * a
        + (&cross + cross.transpose()) * model.mu()
        + bk.transpose() * p * &bk * (model.mu() * model.mu() + model.sigma2())
}

/// Backward Riccati recursion along one forward trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRiccati {
    /// `q0[n]` is attached to `states[n]`; `q0[horizon]` is the terminal matrix.
    pub q0: Vec<Matrix>,
    pub states: Vec<State>,
    pub horizon: usize,
    pub r_weight: Matrix,
    /// Smallest eigenvalue over the sequence.
    pub alpha1: f64,
    /// Largest eigenvalue over the sequence.
    pub alpha2: f64,
}

pub const DEFAULT_CEILING: f64 = 1e12;

pub fn trajectory_riccati(
    system: &dyn DiscreteSystem,
    x0: &State,
    horizon: usize,
    r_weight: &Matrix,
    terminal: &Matrix,
    ceiling: f64,
) -> Result<TrajectoryRiccati> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    let n = system.dim();
    check_square(r_weight, n, "R")?;
    check_square(terminal, n, "terminal")?;

    let mut states = Vec::with_capacity(horizon + 1);
    states.push(x0.clone());
    check_bounded(x0, 0)?;
    for k in 0..horizon {
        let next = system.step(&states[k]);
        check_bounded(&next, k + 1)?;
        states.push(next);
    }

    let b = system.input_matrix();
    let mut q0 = vec![Matrix::zeros(n, n); horizon + 1];
    q0[horizon] = symmetrize(terminal);
    for k in (0..horizon).rev() {
        let a = system.jacobian(&states[k]);
        let q = riccati_map(&a, b, &q0[k + 1], r_weight)?;
        let norm = q.norm();
        if !norm.is_finite() || norm > ceiling {
            return Err(Error::Unbounded { index: k, ceiling });
        }
        q0[k] = q;
    }

    let (mut alpha1, mut alpha2) = (f64::INFINITY, f64::NEG_INFINITY);
    for q in &q0 {
        let (lo, hi) = symmetric_extremes(q);
        alpha1 = alpha1.min(lo);
        alpha2 = alpha2.max(hi);
    }
    Ok(TrajectoryRiccati {
        q0,
        states,
        horizon,
        r_weight: r_weight.clone(),
        alpha1,
        alpha2,
    })
}

/// Doubles the horizon from `start` (terminal `I`) until the earliest 10% of
/// the recursion changes by less than `tol` in Frobenius norm.
pub fn converged_trajectory_riccati(
    system: &dyn DiscreteSystem,
    x0: &State,
    r_weight: &Matrix,
    start: usize,
    max_horizon: usize,
    tol: f64,
) -> Result<TrajectoryRiccati> {
    let n = system.dim();
    let terminal = Matrix::identity(n, n);
    let mut horizon = start.max(10);
    let mut current =
        trajectory_riccati(system, x0, horizon, r_weight, &terminal, DEFAULT_CEILING)?;
    while horizon * 2 <= max_horizon {
        let doubled = trajectory_riccati(
            system,
            x0,
            horizon * 2,
            r_weight,
            &terminal,
            DEFAULT_CEILING,
        )?;
        let head = (horizon / 10).max(1);
        let change = (0..head)
            .map(|i| (&doubled.q0[i] - &current.q0[i]).norm())
            .fold(0.0, f64::max);
        horizon *= 2;
        current = doubled;
        if change < tol {
            return Ok(current);
        }
    }
    Err(Error::NoConvergence {
        iterations: horizon,
        residual: f64::NAN,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SufficientReport {
    pub holds: bool,
    /// Largest eigenvalue of the condition matrix over all evaluated states.
    pub margin: f64,
}

/// Evaluates `J'(P - p P B (B'PB)^{-1} B'P) J - P` at every sample and at the
/// origin; the condition holds iff its largest eigenvalue is negative
/// everywhere.
pub fn check_sufficient(
    system: &dyn DiscreteSystem,
    p_sol: &RiccatiSolution,
    p: f64,
    sample_states: &[State],
) -> Result<SufficientReport> {
    let pm = &p_sol.p;
    let b = system.input_matrix();
    let pb = pm * b;
    let inv = spd_inverse(&(b.transpose() * &pb), "B'PB")?;
    let middle = pm - &pb * inv * pb.transpose() * p;
    let eval = |x: &State| {
        let j = system.jacobian(x);
        symmetric_extremes(&(j.transpose() * &middle * &j - pm)).1
    };
    let origin = eval(&State::zeros(system.dim()));
    let margin = sample_states
        .par_iter()
        .map(eval)
        .reduce(|| f64::NEG_INFINITY, f64::max)
        .max(origin);
    Ok(SufficientReport {
        holds: margin < 0.0,
        margin,
    })
}

/// `count` states along the orbit of `x0`, taken every `stride` steps after
/// `burn_in` steps.
pub fn orbit_samples(
    system: &dyn DiscreteSystem,
    x0: &State,
    burn_in: usize,
    count: usize,
    stride: usize,
) -> Result<Vec<State>> {
    let stride = stride.max(1);
    let mut x = x0.clone();
    let mut step = 0;
    for _ in 0..burn_in {
        x = system.step(&x);
        step += 1;
        check_bounded(&x, step)?;
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(x.clone());
        for _ in 0..stride {
            x = system.step(&x);
            step += 1;
            check_bounded(&x, step)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::linear_system;
    use crate::linalg::from_rows;
    use proptest::prelude::*;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_dare_closed_form() {
        let s = solve_dare(&scalar(2.0), &scalar(1.0), &scalar(1.0), 1e-13, 1000).unwrap();
        assert!((s.p[(0, 0)] - (2.0 + 5f64.sqrt())).abs() < 1e-9);
        assert!(s.residual < 1e-13);
    }

    #[test]
    fn dead_system_gives_r() {
        let a = Matrix::zeros(2, 2);
        let b = from_rows(&[&[1.0], &[0.0]]);
        let s = solve_dare(&a, &b, &Matrix::identity(2, 2), 1e-12, 100).unwrap();
        assert!((&s.p - Matrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn unstabilizable_pair() {
        let a = from_rows(&[&[2.0, 0.0], &[0.0, 0.5]]);
        let b = from_rows(&[&[0.0], &[1.0]]);
        assert_eq!(
            solve_dare(&a, &b, &Matrix::identity(2, 2), 1e-10, 100),
            Err(Error::NotStabilizable)
        );
    }

    #[test]
    fn iteration_budget() {
        let r = solve_dare(&scalar(2.0), &scalar(1.0), &scalar(1.0), 1e-13, 2);
        assert!(matches!(r, Err(Error::NoConvergence { iterations: 2, .. })));
    }

    #[test]
    fn gain_examples() {
        let p = scalar(1.0);
        for prob in [0.1, 0.5, 1.0] {
            let k = optimal_gain(
                &p,
                &scalar(2.0),
                &scalar(1.0),
                &ChannelModel::bernoulli(prob).unwrap(),
            )
            .unwrap();
            assert!((k[(0, 0)] + 2.0).abs() < 1e-12);
        }
        let zero =
            ChannelModel::two_moment(0.0, 1.0, crate::channel::TwoMomentFamily::Gaussian).unwrap();
        assert_eq!(
            optimal_gain(&p, &scalar(2.0), &scalar(1.0), &zero).unwrap(),
            scalar(0.0)
        );
        let singular = optimal_gain(
            &Matrix::zeros(1, 1),
            &scalar(2.0),
            &scalar(1.0),
            &ChannelModel::bernoulli(1.0).unwrap(),
        );
        assert!(matches!(singular, Err(Error::Singular(_))));
    }

    #[test]
    fn trajectory_examples() {
        let sys = linear_system(scalar(2.0), scalar(1.0)).unwrap();
        let x0 = State::zeros(1);
        let t =
            trajectory_riccati(&sys, &x0, 1, &scalar(0.0), &scalar(1.0), DEFAULT_CEILING).unwrap();
        assert!((t.q0[0][(0, 0)] - 2.0).abs() < 1e-12);

        let t =
            trajectory_riccati(&sys, &x0, 20, &scalar(0.0), &scalar(0.0), DEFAULT_CEILING).unwrap();
        assert!(t.q0.iter().all(|q| q[(0, 0)] == 0.0));
    }

    #[test]
    fn trajectory_ceiling() {
        let sys = linear_system(scalar(2.0), scalar(1.0)).unwrap();
        let r = trajectory_riccati(&sys, &State::zeros(1), 50, &scalar(1.0), &scalar(1.0), 3.0);
        assert!(matches!(r, Err(Error::Unbounded { .. })));
    }

    #[test]
    fn scalar_sufficient_threshold() {
        let sys = linear_system(scalar(2.0), scalar(1.0)).unwrap();
        let sol = solve_dare(&scalar(2.0), &scalar(1.0), &scalar(1.0), 1e-12, 1000).unwrap();
        for (p, holds) in [
            (0.7, false),
            (0.74, false),
            (0.76, true),
            (0.9, true),
            (0.0, false),
        ] {
            assert_eq!(
                check_sufficient(&sys, &sol, p, &[]).unwrap().holds,
                holds,
                "p = {p}"
            );
        }
    }

    proptest! {
        #[test]
        fn random_stable_dare_converges(entries in prop::collection::vec(-1.0f64..1.0, 4)) {
            let mut a = Matrix::from_row_slice(2, 2, &entries);
            let rho = crate::linalg::spectral_radius(&a);
            if rho >= 0.95 {
                a *= 0.95 / rho;
            }
            let s = solve_dare(&a, &Matrix::identity(2, 2), &Matrix::identity(2, 2), 1e-10, 200).unwrap();
            prop_assert!(s.residual < 1e-10);
            prop_assert!((&s.p - s.p.transpose()).abs().max() < 1e-12);
            prop_assert!(symmetric_extremes(&s.p).0 > 0.0);
            let back = riccati_map(&a, &Matrix::identity(2, 2), &s.p, &Matrix::identity(2, 2)).unwrap();
            prop_assert!((back - &s.p).norm() <= 1e-10);
        }

        #[test]
        fn gain_is_first_order_optimal(
            a in prop::collection::vec(-2.0f64..2.0, 4),
            b in prop::collection::vec(-1.0f64..1.0, 2),
            l in prop::collection::vec(-1.0f64..1.0, 4),
            mu in 0.1f64..1.0,
            sigma2 in 0.0f64..0.5,
        ) {
            let a = Matrix::from_row_slice(2, 2, &a);
            let b = Matrix::from_row_slice(2, 1, &b);
            prop_assume!(b.norm() > 0.1);
            let l = Matrix::from_row_slice(2, 2, &l);
            let p = &l * l.transpose() + Matrix::identity(2, 2);
            let model = ChannelModel::two_moment(mu, sigma2, crate::channel::TwoMomentFamily::Gaussian).unwrap();
            let k = optimal_gain(&p, &a, &b, &model).unwrap();
            let base = expected_closed_loop_cost(&p, &a, &b, &k, &model).trace();
            for j in 0..2 {
                for delta in [1e-3, -1e-3] {
                    let mut kp = k.clone();
                    kp[(0, j)] += delta;
                    prop_assert!(expected_closed_loop_cost(&p, &a, &b, &kp, &model).trace() > base);
                }
            }
        }
    }
}
