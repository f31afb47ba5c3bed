//! Discrete-time maps `x_{n+1} = f(x_n) + B v_n` with analytic Jacobians.

use crate::{Error, Matrix, Result, State};

/// Any state whose Euclidean norm exceeds this is treated as diverged.
pub const DIVERGENCE_CAP: f64 = 1e9;

/// Default central-difference step for [`jacobian_fd`].
pub const FD_STEP: f64 = 1e-6;

/// A map `f: R^N -> R^N` with its Jacobian and an `N x d` input matrix.
pub trait DiscreteSystem: Send + Sync {
    fn dim(&self) -> usize;

    fn step(&self, x: &State) -> State;

    fn jacobian(&self, x: &State) -> Matrix;

    fn input_matrix(&self) -> &Matrix;

    fn input_dim(&self) -> usize {
        self.input_matrix().ncols()
    }

    /// `f(x) + B v + gamma`.
    fn step_with_input(&self, x: &State, v: &State, gamma: &State) -> State {
        self.step(x) + self.input_matrix() * v + gamma
    }
}

/// Fails with [`Error::Diverged`] when `x` is non-finite or beyond the cap.
pub fn check_bounded(x: &State, step: usize) -> Result<()> {
    let n = x.norm();
    if n.is_finite() && n <= DIVERGENCE_CAP {
        Ok(())
    } else {
        Err(Error::Diverged { step })
    }
}

/// Parameters of the discrete Lorentz map and its saturation envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorentzParams {
    pub alpha: f64,
    pub beta: f64,
    pub k_sat: f64,
    pub l_sat: f64,
    pub m_sat: f64,
}

impl LorentzParams {
    pub const DEFAULT_K: f64 = 100.0;
    pub const DEFAULT_L: f64 = 50.0;
    pub const DEFAULT_M: f64 = 100.0;

    /// Parameters with the default saturation constants `(k, L, M) = (100, 50, 100)`.
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        Self::with_saturation(
            alpha,
            beta,
            Self::DEFAULT_K,
            Self::DEFAULT_L,
            Self::DEFAULT_M,
        )
    }

    pub fn with_saturation(
        alpha: f64,
        beta: f64,
        k_sat: f64,
        l_sat: f64,
        m_sat: f64,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "beta must lie in (0, 1), got {beta}"
            )));
        }
        for (name, v) in [("k_sat", k_sat), ("l_sat", l_sat), ("m_sat", m_sat)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(Self {
            alpha,
            beta,
            k_sat,
            l_sat,
            m_sat,
        })
    }

    /// Determinant of the Jacobian at the origin, `(1 - beta) + 2 alpha beta^2`.
    pub fn origin_determinant(&self) -> f64 {
        (1.0 - self.beta) + 2.0 * self.alpha * self.beta * self.beta
    }
}

/// The unsaturated Lorentz right-hand side `F~(z)`.
///
/// Evaluated in origin-centred form, which is algebraically identical to the
/// shifted form but makes `F~(0) = 0` exact in floating point.
fn lorentz_rhs(x: f64, y: f64, p: &LorentzParams) -> (f64, f64) {
    let (a, b) = (p.alpha, p.beta);
    let sa = a.sqrt();
    let xn = x - b * y * (x + sa);
    let yn = (1.0 - b) * y + b * x * x + 2.0 * b * sa * x;
    (xn, yn)
}

/// First component of `F~`; the cancelling controller is its negation.
pub(crate) fn lorentz_first(z: &State, p: &LorentzParams) -> f64 {
    lorentz_rhs(z[0], z[1], p).0
}

/// `F~_s(z) + B v + gamma` with `B = (1, 0)'`.
pub fn lorentz_step(z: &State, params: &LorentzParams, v: f64, gamma: &State) -> State {
    let (xn, yn) = lorentz_rhs(z[0], z[1], params);
    State::from_vec(vec![xn + v + gamma[0], yn + gamma[1]])
}

/// Jacobian of the unsaturated map.
pub fn lorentz_jacobian(z: &State, params: &LorentzParams) -> Matrix {
    let (a, b) = (params.alpha, params.beta);
    let sa = a.sqrt();
    let (x, y) = (z[0], z[1]);
    Matrix::from_row_slice(
        2,
        2,
        &[
            (1.0 + a * b) - b * (y + a),
            -b * (x + sa),
            2.0 * b * (x + sa),
            1.0 - b,
        ],
    )
}

struct Envelope {
    g1: f64,
    g2: f64,
    dg1: f64,
    dg2: f64,
}

fn envelope(r: f64, p: &LorentzParams) -> Envelope {
    let t1 = (p.k_sat * (p.m_sat - r)).tanh();
    let t2 = (p.k_sat * (r - p.m_sat)).tanh();
    Envelope {
        g1: 0.5 * (1.0 + t1),
        g2: p.l_sat * (1.0 + t2),
        dg1: -0.5 * p.k_sat * (1.0 - t1 * t1),
        dg2: p.l_sat * p.k_sat * (1.0 - t2 * t2),
    }
}

/// `F~(z) G1(z) + G2(z) z + B v + gamma`.
///
/// Inside `||z|| < M` this is the Lorentz map; far outside it tends to
/// `2 L z` (the `1 + tanh` factor saturates at 2).
pub fn saturated_lorentz_step(z: &State, params: &LorentzParams, v: f64, gamma: &State) -> State {
    let (fx, fy) = lorentz_rhs(z[0], z[1], params);
    let e = envelope(z.norm(), params);
    State::from_vec(vec![
        fx * e.g1 + e.g2 * z[0] + v + gamma[0],
        fy * e.g1 + e.g2 * z[1] + gamma[1],
    ])
}

pub fn saturated_lorentz_jacobian(z: &State, params: &LorentzParams) -> Matrix {
    let r = z.norm();
    let e = envelope(r, params);
    let (fx, fy) = lorentz_rhs(z[0], z[1], params);
    let f = State::from_vec(vec![fx, fy]);
    let grad_r = if r > 0.0 { z / r } else { State::zeros(2) };
    lorentz_jacobian(z, params) * e.g1
        + &f * (grad_r.transpose() * e.dg1)
        + Matrix::identity(2, 2) * e.g2
        + z * (grad_r.transpose() * e.dg2)
}

fn lorentz_input() -> Matrix {
    Matrix::from_column_slice(2, 1, &[1.0, 0.0])
}

/// The discrete Lorentz map with single input `B = (1, 0)'`.
#[derive(Debug, Clone)]
pub struct Lorentz {
    pub params: LorentzParams,
    b: Matrix,
}

impl Lorentz {
    pub fn new(params: LorentzParams) -> Self {
        Self {
            params,
            b: lorentz_input(),
        }
    }
}

impl DiscreteSystem for Lorentz {
    fn dim(&self) -> usize {
        2
    }

    fn step(&self, x: &State) -> State {
        lorentz_step(x, &self.params, 0.0, &State::zeros(2))
    }

    fn jacobian(&self, x: &State) -> Matrix {
        lorentz_jacobian(x, &self.params)
    }

    fn input_matrix(&self) -> &Matrix {
        &self.b
    }
}

/// The Lorentz map with the tanh saturation envelope, which has a uniformly
/// bounded Jacobian.
#[derive(Debug, Clone)]
pub struct SaturatedLorentz {
    pub params: LorentzParams,
    b: Matrix,
}

impl SaturatedLorentz {
    pub fn new(params: LorentzParams) -> Self {
        Self {
            params,
            b: lorentz_input(),
        }
    }
}

impl DiscreteSystem for SaturatedLorentz {
    fn dim(&self) -> usize {
        2
    }

    fn step(&self, x: &State) -> State {
        saturated_lorentz_step(x, &self.params, 0.0, &State::zeros(2))
    }

    fn jacobian(&self, x: &State) -> Matrix {
        saturated_lorentz_jacobian(x, &self.params)
    }

    fn input_matrix(&self) -> &Matrix {
        &self.b
    }
}

/// `f(x) = A x` with input matrix `B`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    a: Matrix,
    b: Matrix,
}

impl LinearSystem {
    pub fn a(&self) -> &Matrix {
        &self.a
    }
}

/// Builds `f(x) = A x`; `A` must be square, `B` conformable with `B'B > 0`.
pub fn linear_system(a: Matrix, b: Matrix) -> Result<LinearSystem> {
    if a.nrows() == 0 || a.nrows() != a.ncols() {
        return Err(Error::Shape(format!(
            "A must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if b.nrows() != a.nrows() || b.ncols() == 0 {
        return Err(Error::Shape(format!(
            "B must be {}xd with d >= 1, got {}x{}",
            a.nrows(),
            b.nrows(),
            b.ncols()
        )));
    }
    if b.ncols() > b.nrows() || crate::linalg::rank(&b, 1e-12) < b.ncols() {
        return Err(Error::InvalidParameter(
            "B'B must be positive definite".into(),
        ));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite matrix entry".into()));
    }
    Ok(LinearSystem { a, b })
}

impl DiscreteSystem for LinearSystem {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn step(&self, x: &State) -> State {
        &self.a * x
    }

    fn jacobian(&self, _x: &State) -> Matrix {
        self.a.clone()
    }

    fn input_matrix(&self) -> &Matrix {
        &self.b
    }
}

/// The systems the CLI and experiment configs can name.
#[derive(Debug, Clone)]
pub enum BuiltinSystem {
    Lorentz(Lorentz),
    SaturatedLorentz(SaturatedLorentz),
    Linear(LinearSystem),
}

impl BuiltinSystem {
    pub fn lorentz_params(&self) -> Option<&LorentzParams> {
        match self {
            BuiltinSystem::Lorentz(s) => Some(&s.params),
            BuiltinSystem::SaturatedLorentz(s) => Some(&s.params),
            BuiltinSystem::Linear(_) => None,
        }
    }

    fn inner(&self) -> &dyn DiscreteSystem {
        match self {
            BuiltinSystem::Lorentz(s) => s,
            BuiltinSystem::SaturatedLorentz(s) => s,
            BuiltinSystem::Linear(s) => s,
        }
    }
}

impl DiscreteSystem for BuiltinSystem {
    fn dim(&self) -> usize {
        self.inner().dim()
    }

    fn step(&self, x: &State) -> State {
        self.inner().step(x)
    }

    fn jacobian(&self, x: &State) -> Matrix {
        self.inner().jacobian(x)
    }

    fn input_matrix(&self) -> &Matrix {
        self.inner().input_matrix()
    }
}

/// Central-difference Jacobian, column by column.
pub fn jacobian_fd(system: &dyn DiscreteSystem, x: &State, h: f64) -> Matrix {
    let n = system.dim();
    let mut jac = Matrix::zeros(n, n);
    for i in 0..n {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[i] += h;
        minus[i] -= h;
        let col = (system.step(&plus) - system.step(&minus)) / (2.0 * h);
        jac.set_column(i, &col);
    }
    jac
}

/// `sum_{l=0}^{k} Phi(x_k, x_l) B B' Phi(x_k, x_l)'` along the uncontrolled
/// trajectory from `x0`, where `Phi(x_k, x_l) = J(x_{k-1}) ... J(x_l)` and
/// `Phi(x_k, x_k) = I`.
pub fn controllability_gramian(
    system: &dyn DiscreteSystem,
    x0: &State,
    k: usize,
) -> Result<Matrix> {
    let mut traj = Vec::with_capacity(k + 1);
    let mut x = x0.clone();
    check_bounded(&x, 0)?;
    traj.push(x.clone());
    for step in 1..=k {
        x = system.step(&x);
        check_bounded(&x, step)?;
        traj.push(x.clone());
    }
    let b = system.input_matrix();
    let bbt = b * b.transpose();
    let n = system.dim();
    let mut phi = Matrix::identity(n, n);
    let mut gram = &phi * &bbt * phi.transpose();
    for l in (0..k).rev() {
        phi = &phi * system.jacobian(&traj[l]);
        gram += &phi * &bbt * phi.transpose();
    }
    Ok(gram)
}
