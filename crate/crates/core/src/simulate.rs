//! Monte Carlo experiments over the erasure channel: master-slave error
//! ensembles, second-moment checks, and the linearized covariance recursion.

use rayon::prelude::*;

use crate::channel::{sample_noise, sample_xi, ChannelModel, NoiseModel, SeededStream, StreamTag};
use crate::dynamics::{check_bounded, lorentz_first, BuiltinSystem, DiscreteSystem, LorentzParams};
use crate::linalg::spd_inverse;
use crate::lyapunov::settle_on_attractor;
use crate::{Error, Matrix, Result, State};

/// Number of terminal-error histogram bins per coordinate.
pub const HISTOGRAM_BINS: usize = 101;
/// MSE values at or below this are left out of the decay fit.
pub const MSE_FLOOR: f64 = 1e-20;
/// Second moments above this count as unbounded.
pub const SECOND_MOMENT_CAP: f64 = 1e6;
/// Covariance traces above this count as diverged.
pub const TRACE_CEILING: f64 = 1e12;
pub const TRACE_TOL: f64 = 1e-9;
const TREND_WINDOW: usize = 100;
const CHUNK: usize = 512;

/// `k(z) = -[(1 + a b)(x + sqrt a) - b (x + sqrt a)(y + a) - sqrt a]`, which
/// zeroes the first coordinate of the unsaturated map.
pub fn cancel_controller(z: &State, params: &LorentzParams) -> f64 {
    -lorentz_first(z, params)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Controller {
    /// `k(z) = -(B'B)^{-1} B' f(z)`: removes everything the input can reach.
    CancelNonlinearity,
    /// `k(z) = K z` with `K` of shape `d x N`.
    LinearGain(Matrix),
    None,
}

impl Controller {
    pub fn control(&self, system: &dyn DiscreteSystem, z: &State) -> Result<State> {
        let b = system.input_matrix();
        match self {
            Controller::None => Ok(State::zeros(b.ncols())),
            Controller::LinearGain(k) => {
                if k.nrows() != b.ncols() || k.ncols() != system.dim() {
                    return Err(Error::Shape(format!(
                        "gain must be {}x{}, got {}x{}",
                        b.ncols(),
                        system.dim(),
                        k.nrows(),
                        k.ncols()
                    )));
                }
                Ok(k * z)
            }
            Controller::CancelNonlinearity => {
                let inv = spd_inverse(&(b.transpose() * b), "B'B")?;
                Ok(-(inv * b.transpose() * system.step(z)))
            }
        }
    }
}

/// `f(z) + xi B k(z) + xi B w + gamma`.
pub fn closed_loop_step(
    z: &State,
    system: &dyn DiscreteSystem,
    controller: &Controller,
    xi: f64,
    w: &State,
    gamma: &State,
) -> Result<State> {
    let u = controller.control(system, z)?;
    let next = system.step_with_input(z, &((u + w) * xi), gamma);
    check_bounded(&next, 0)?;
    Ok(next)
}

/// How replicas pick their starting points.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialConditions {
    pub x0: Option<State>,
    pub y0: Option<State>,
    pub w0: Option<State>,
    /// Radius of the ball `x0`/`y0` are drawn from when not fixed.
    pub radius: f64,
    /// Radius of the ball `w0` is drawn from when not fixed.
    pub master_radius: f64,
    /// Master steps before the slaves start.
    pub warmup: usize,
}

impl Default for InitialConditions {
    fn default() -> Self {
        Self {
            x0: None,
            y0: None,
            w0: None,
            radius: 2.0,
            master_radius: 0.5,
            warmup: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub slave: BuiltinSystem,
    /// Drives the slave through `-k(w_n)`; `None` means no coupling.
    pub master: Option<BuiltinSystem>,
    pub channel: ChannelModel,
    pub noise: NoiseModel,
    pub n_steps: usize,
    pub n_realizations: usize,
    pub master_seed: u64,
    pub init: InitialConditions,
    pub controller: Controller,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
}

impl ExperimentConfig {
    pub fn new(slave: BuiltinSystem, channel: ChannelModel) -> Self {
        Self {
            slave,
            master: None,
            channel,
            noise: NoiseModel::none(),
            n_steps: 100,
            n_realizations: 3000,
            master_seed: 0,
            init: InitialConditions::default(),
            controller: Controller::CancelNonlinearity,
            threads: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_realizations == 0 || self.n_steps == 0 {
            return Err(Error::InvalidParameter(
                "n_steps and n_realizations must be at least 1".into(),
            ));
        }
        let n = self.slave.dim();
        if let Some(m) = &self.master {
            if m.dim() != n {
                return Err(Error::Shape(format!(
                    "master dimension {} differs from slave {n}",
                    m.dim()
                )));
            }
        }
        for (name, v) in [
            ("x0", &self.init.x0),
            ("y0", &self.init.y0),
            ("w0", &self.init.w0),
        ] {
            if let Some(v) = v {
                if v.len() != n {
                    return Err(Error::Shape(format!(
                        "{name} has length {}, expected {n}",
                        v.len()
                    )));
                }
            }
        }
        if !(self.init.radius >= 0.0 && self.init.master_radius >= 0.0) {
            return Err(Error::InvalidParameter(
                "initial-condition radii must be nonnegative".into(),
            ));
        }
        self.controller.control(&self.slave, &State::zeros(n))?;
        Ok(())
    }
}

/// Full record of one replica.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaRun {
    pub master: Vec<State>,
    pub x: Vec<State>,
    pub y: Vec<State>,
    pub error: Vec<State>,
    /// Channel draws shared by both slave trajectories.
    pub xi: Vec<f64>,
    /// Noise draws shared by both slave trajectories.
    pub gamma: Vec<State>,
    pub diverged_at: Option<usize>,
}

struct Outcome {
    err_sq: Vec<f64>,
    terminal: State,
    diverged: bool,
    run: Option<ReplicaRun>,
}

fn replica(config: &ExperimentConfig, index: u64, record: bool) -> Result<Outcome> {
    let n = config.slave.dim();
    let mut init = SeededStream::new(config.master_seed, index, StreamTag::Init);
    let mut chan = SeededStream::new(config.master_seed, index, StreamTag::Channel);
    let mut noise = SeededStream::new(config.master_seed, index, StreamTag::Noise);

    let failed = |err_sq: Vec<f64>, run: Option<ReplicaRun>| Outcome {
        err_sq,
        terminal: State::zeros(n),
        diverged: true,
        run,
    };

    let mut w = match &config.master {
        None => None,
        Some(m) => {
            let settled = match &config.init.w0 {
                Some(w0) => {
                    let mut w = w0.clone();
                    let mut ok = true;
                    for k in 0..config.init.warmup {
                        w = m.step(&w);
                        if check_bounded(&w, k + 1).is_err() {
                            ok = false;
                            break;
                        }
                    }
                    ok.then_some(w)
                }
                None => settle_on_attractor(
                    m,
                    &mut init,
                    config.init.master_radius,
                    config.init.warmup,
                    100,
                )
                .ok(),
            };
            match settled {
                Some(w) => Some(w),
                None => {
                    let run = record.then(|| ReplicaRun {
                        master: Vec::new(),
                        x: Vec::new(),
                        y: Vec::new(),
                        error: Vec::new(),
                        xi: Vec::new(),
                        gamma: Vec::new(),
                        diverged_at: Some(0),
                    });
                    return Ok(failed(Vec::new(), run));
                }
            }
        }
    };
    let mut x = config
        .init
        .x0
        .clone()
        .unwrap_or_else(|| init.uniform_in_ball(n, config.init.radius));
    let mut y = config
        .init
        .y0
        .clone()
        .unwrap_or_else(|| init.uniform_in_ball(n, config.init.radius));

    let mut err_sq = Vec::with_capacity(config.n_steps + 1);
    err_sq.push((&x - &y).norm_squared());
    let mut run = record.then(|| ReplicaRun {
        master: w.iter().cloned().collect(),
        x: vec![x.clone()],
        y: vec![y.clone()],
        error: vec![&x - &y],
        xi: Vec::new(),
        gamma: Vec::new(),
        diverged_at: None,
    });

    let d = config.slave.input_dim();
    for step in 1..=config.n_steps {
        let xi = sample_xi(&config.channel, &mut chan);
        let gamma = sample_noise(&config.noise, n, &mut noise);
        let coupling = match (&config.master, &w) {
            (Some(m), Some(wn)) => -config.controller.control(m, wn)?,
            _ => State::zeros(d),
        };
        let nx = closed_loop_step(&x, &config.slave, &config.controller, xi, &coupling, &gamma);
        let ny = closed_loop_step(&y, &config.slave, &config.controller, xi, &coupling, &gamma);
        let nw = match (&config.master, &w) {
            (Some(m), Some(wn)) => {
                let next = m.step(wn);
                check_bounded(&next, step).map(|_| Some(next))
            }
            _ => Ok(None),
        };
        match (nx, ny, nw) {
            (Ok(nx), Ok(ny), Ok(nw)) => {
                x = nx;
                y = ny;
                w = nw;
            }
            (a, b, c) => {
                for e in [a.err(), b.err(), c.err()].into_iter().flatten() {
                    if !matches!(e, Error::Diverged { .. }) {
                        return Err(e);
                    }
                }
                if let Some(r) = run.as_mut() {
                    r.diverged_at = Some(step);
                }
                return Ok(failed(err_sq, run));
            }
        }
        let e = &x - &y;
        err_sq.push(e.norm_squared());
        if let Some(r) = run.as_mut() {
            r.master.extend(w.iter().cloned());
            r.x.push(x.clone());
            r.y.push(y.clone());
            r.error.push(e);
            r.xi.push(xi);
            r.gamma.push(gamma);
        }
    }
    Ok(Outcome {
        err_sq,
        terminal: &x - &y,
        diverged: false,
        run,
    })
}

/// Runs one replica and keeps every trajectory.
pub fn simulate_master_slave(config: &ExperimentConfig, replica_index: u64) -> Result<ReplicaRun> {
    config.validate()?;
    if replica_index >= config.n_realizations as u64 {
        return Err(Error::InvalidParameter(format!(
            "replica {replica_index} out of range (n_realizations = {})",
            config.n_realizations
        )));
    }
    Ok(replica(config, replica_index, true)?
        .run
        .expect("recorded run"))
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))
}

/// Evaluates `f` on replicas `0..count` in parallel chunks and hands the
/// results to `sink` in replica order, so reductions do not depend on the
/// schedule.
fn for_each_replica<T, F, S>(count: usize, threads: usize, f: F, mut sink: S) -> Result<()>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
    S: FnMut(T),
{
    let pool = thread_pool(threads)?;
    let mut start = 0;
    while start < count {
        let end = (start + CHUNK).min(count);
        let chunk: Vec<Result<T>> =
            pool.install(|| (start as u64..end as u64).into_par_iter().map(&f).collect());
        for item in chunk {
            sink(item?);
        }
        start = end;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `HISTOGRAM_BINS + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Uniform bins over `[-max|v|, max|v|]`, or `[-1, 1]` when all values
    /// are zero.
    pub fn symmetric(values: &[f64], bins: usize) -> Self {
        let mut half = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if half == 0.0 || !half.is_finite() {
            half = 1.0;
        }
        let width = 2.0 * half / bins as f64;
        let edges = (0..=bins).map(|i| -half + i as f64 * width).collect();
        let mut counts = vec![0u64; bins];
        for v in values {
            let idx = (((v + half) / (2.0 * half)) * bins as f64).floor();
            counts[(idx.max(0.0) as usize).min(bins - 1)] += 1;
        }
        Self { edges, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Running sums for per-step mean and standard error.
#[derive(Debug, Clone)]
struct MomentAccumulator {
    sum: Vec<f64>,
    sumsq: Vec<f64>,
    count: usize,
}

impl MomentAccumulator {
    fn new(len: usize) -> Self {
        Self {
            sum: vec![0.0; len],
            sumsq: vec![0.0; len],
            count: 0,
        }
    }

    fn add(&mut self, series: &[f64]) {
        for (i, v) in series.iter().enumerate() {
            self.sum[i] += v;
            self.sumsq[i] += v * v;
        }
        self.count += 1;
    }

    fn finish(&self) -> (Vec<f64>, Vec<f64>) {
        let m = self.count as f64;
        if self.count == 0 {
            return (
                vec![f64::NAN; self.sum.len()],
                vec![f64::NAN; self.sum.len()],
            );
        }
        let mean: Vec<f64> = self.sum.iter().map(|s| s / m).collect();
        let stderr = mean
            .iter()
            .zip(&self.sumsq)
            .map(|(mu, sq)| {
                if self.count < 2 {
                    return 0.0;
                }
                let var = ((sq - m * mu * mu) / (m - 1.0)).max(0.0);
                (var / m).sqrt()
            })
            .collect();
        (mean, stderr)
    }
}

/// Least-squares slope of `ys` against `xs` with its standard error.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return (0.0, f64::INFINITY);
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    if xs.len() < 3 {
        return (slope, f64::INFINITY);
    }
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
        .sum();
    (slope, (rss / (n - 2.0) / sxx).sqrt())
}

/// `exp(slope)` of `log mse` over the last 60% of steps with values above
/// [`MSE_FLOOR`]; 0 when the whole window sits at the floor.
pub fn fit_decay_rate(mse: &[f64]) -> f64 {
    let len = mse.len();
    let start = len - (len * 6) / 10;
    let (xs, ys): (Vec<f64>, Vec<f64>) = (start..len)
        .filter(|&i| mse[i] > MSE_FLOOR && mse[i].is_finite())
        .map(|i| (i as f64, mse[i].ln()))
        .unzip();
    if xs.len() < 2 {
        return 0.0;
    }
    linear_fit(&xs, &ys).0.exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    /// `E||x_n - y_n||^2` for `n = 0..=n_steps` over surviving replicas.
    pub mse: Vec<f64>,
    pub mse_stderr: Vec<f64>,
    /// Terminal error histogram per coordinate.
    pub histograms: Vec<Histogram>,
    /// Sample variance (ddof 1) of the terminal error per coordinate.
    pub terminal_variance: Vec<f64>,
    pub total_terminal_variance: f64,
    pub diverged_count: usize,
    pub n_realizations: usize,
    pub beta_hat: f64,
}

fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Runs every replica and aggregates error statistics.
pub fn ensemble_error_stats(config: &ExperimentConfig) -> Result<EnsembleStats> {
    config.validate()?;
    let n = config.slave.dim();
    let mut acc = MomentAccumulator::new(config.n_steps + 1);
    let mut terminal: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut diverged_count = 0;
    for_each_replica(
        config.n_realizations,
        config.threads,
        |i| replica(config, i, false),
        |out| {
            if out.diverged {
                diverged_count += 1;
            } else {
                acc.add(&out.err_sq);
                for (c, v) in terminal.iter_mut().zip(out.terminal.iter()) {
                    c.push(*v);
                }
            }
        },
    )?;
    let (mse, mse_stderr) = acc.finish();
    let terminal_variance: Vec<f64> = terminal.iter().map(|c| sample_variance(c)).collect();
    Ok(EnsembleStats {
        beta_hat: fit_decay_rate(&mse),
        mse,
        mse_stderr,
        histograms: terminal
            .iter()
            .map(|c| Histogram::symmetric(c, HISTOGRAM_BINS))
            .collect(),
        total_terminal_variance: terminal_variance.iter().sum(),
        terminal_variance,
        diverged_count,
        n_realizations: config.n_realizations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecondMomentReport {
    pub bounded: bool,
    /// Largest `E||x_n||^2` over the final half of the horizon.
    pub sup_estimate: f64,
    /// Slope of the batch means over the final half and its standard error.
    pub tail_slope: f64,
    pub tail_slope_stderr: f64,
    pub mse: Vec<f64>,
    pub mse_stderr: Vec<f64>,
    pub beta_hat: f64,
    pub diverged_count: usize,
}

const TAIL_BATCHES: usize = 20;

/// Simulates `x_{n+1} = f(x_n) + xi_n B k(x_n) + gamma_n` from starts in the
/// ball of `config.init.radius` and tests whether `E||x_n||^2` stays bounded
/// without an upward trend. The master system and `y0` are ignored.
pub fn second_moment_check(config: &ExperimentConfig) -> Result<SecondMomentReport> {
    config.validate()?;
    let n = config.slave.dim();
    let zeros = State::zeros(config.slave.input_dim());
    let run = |index: u64| -> Result<Option<Vec<f64>>> {
        let mut init = SeededStream::new(config.master_seed, index, StreamTag::Init);
        let mut chan = SeededStream::new(config.master_seed, index, StreamTag::Channel);
        let mut noise = SeededStream::new(config.master_seed, index, StreamTag::Noise);
        let mut x = config
            .init
            .x0
            .clone()
            .unwrap_or_else(|| init.uniform_in_ball(n, config.init.radius));
        let mut sq = Vec::with_capacity(config.n_steps + 1);
        sq.push(x.norm_squared());
        for _ in 0..config.n_steps {
            let xi = sample_xi(&config.channel, &mut chan);
            let gamma = sample_noise(&config.noise, n, &mut noise);
            match closed_loop_step(&x, &config.slave, &config.controller, xi, &zeros, &gamma) {
                Ok(next) => x = next,
                Err(Error::Diverged { .. }) => return Ok(None),
                Err(e) => return Err(e),
            }
            sq.push(x.norm_squared());
        }
        Ok(Some(sq))
    };

    let mut acc = MomentAccumulator::new(config.n_steps + 1);
    let mut diverged_count = 0;
    for_each_replica(
        config.n_realizations,
        config.threads,
        run,
        |out| match out {
            Some(sq) => acc.add(&sq),
            None => diverged_count += 1,
        },
    )?;
    let (mse, mse_stderr) = acc.finish();

    let tail = &mse[mse.len() / 2..];
    let sup_estimate =
        tail.iter()
            .copied()
            .fold(0.0f64, |m, v| if v.is_nan() { f64::NAN } else { m.max(v) });
    let batch = (tail.len() / TAIL_BATCHES).max(1);
    let means: Vec<f64> = tail
        .chunks(batch)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    let xs: Vec<f64> = (0..means.len()).map(|i| i as f64).collect();
    let (tail_slope, tail_slope_stderr) = linear_fit(&xs, &means);
    let trending = if tail_slope_stderr.is_finite() {
        tail_slope > 3.0 * tail_slope_stderr
    } else {
        tail_slope > 0.0
    };
    let bounded = diverged_count == 0 && sup_estimate < SECOND_MOMENT_CAP && !trending;
    Ok(SecondMomentReport {
        bounded,
        sup_estimate,
        tail_slope,
        tail_slope_stderr,
        beta_hat: fit_decay_rate(&mse),
        mse,
        mse_stderr,
        diverged_count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovarianceStatus {
    Converged(f64),
    Diverged,
    /// Neither settled nor growing monotonically at the horizon.
    Undecided,
}

impl CovarianceStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            CovarianceStatus::Converged(_) => "converged",
            CovarianceStatus::Diverged => "diverged",
            CovarianceStatus::Undecided => "undecided",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceTrace {
    /// `trace(Sigma_n)` from `n = 0`; stops early once past [`TRACE_CEILING`].
    pub traces: Vec<f64>,
    pub p: f64,
    pub status: CovarianceStatus,
}

impl CovarianceTrace {
    pub fn final_trace(&self) -> f64 {
        match self.status {
            CovarianceStatus::Diverged => f64::INFINITY,
            _ => *self.traces.last().expect("at least Sigma_0"),
        }
    }
}

/// `Sigma_{n+1} = (A + mu B K) Sigma_n (A + mu B K)' + sigma^2 (BK) Sigma_n (BK)'`
/// from `Sigma_0 = I`, the exact second moment of `eta_{n+1} = (A + xi B K) eta_n`.
pub fn linearized_covariance_trace(
    a: &Matrix,
    b: &Matrix,
    k: &Matrix,
    model: &ChannelModel,
    n: usize,
) -> Result<CovarianceTrace> {
    let dim = a.nrows();
    if a.ncols() != dim || b.nrows() != dim || k.nrows() != b.ncols() || k.ncols() != dim {
        return Err(Error::Shape("A, B, K are not conformable".into()));
    }
    let bk = b * k;
    let mean = a + &bk * model.mu();
    let var = model.sigma2();
    let mut sigma = Matrix::identity(dim, dim);
    let mut traces = vec![sigma.trace()];
    for _ in 0..n {
        sigma = &mean * &sigma * mean.transpose() + &bk * &sigma * bk.transpose() * var;
        let t = sigma.trace();
        traces.push(t);
        if !t.is_finite() || t > TRACE_CEILING {
            return Ok(CovarianceTrace {
                traces,
                p: model.rho(),
                status: CovarianceStatus::Diverged,
            });
        }
    }
    let status = classify_trace(&traces);
    Ok(CovarianceTrace {
        traces,
        p: model.rho(),
        status,
    })
}

fn classify_trace(traces: &[f64]) -> CovarianceStatus {
    let len = traces.len();
    if len >= 2 && (traces[len - 1] - traces[len - 2]).abs() < TRACE_TOL {
        return CovarianceStatus::Converged(traces[len - 1]);
    }
    if len > TREND_WINDOW
        && traces[len - TREND_WINDOW - 1..]
            .windows(2)
            .all(|w| w[1] > w[0])
    {
        return CovarianceStatus::Diverged;
    }
    CovarianceStatus::Undecided
}

/// Midpoint between the last diverged grid point and the one after it.
/// `None` if nothing diverges or the last grid point still diverges.
pub fn divergence_threshold(points: &[(f64, CovarianceStatus)]) -> Option<f64> {
    let last_div = points
        .iter()
        .rposition(|(_, s)| *s == CovarianceStatus::Diverged)?;
    let next = points.get(last_div + 1)?;
    Some(0.5 * (points[last_div].0 + next.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentSeries {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// Monte Carlo estimate of `E||eta_n||^2` for `eta_{n+1} = (A + xi B K) eta_n`
/// with `eta_0 ~ N(0, I)`, the sampled counterpart of
/// [`linearized_covariance_trace`].
#[allow(clippy::too_many_arguments)]
pub fn linearized_moment_mc(
    a: &Matrix,
    b: &Matrix,
    k: &Matrix,
    model: &ChannelModel,
    n: usize,
    realizations: usize,
    master_seed: u64,
    threads: usize,
) -> Result<MomentSeries> {
    let dim = a.nrows();
    let bk = b * k;
    let run = |index: u64| -> Result<Vec<f64>> {
        let mut init = SeededStream::new(master_seed, index, StreamTag::Init);
        let mut chan = SeededStream::new(master_seed, index, StreamTag::Channel);
        let mut eta = State::from_fn(dim, |_, _| init.standard_normal());
        let mut out = Vec::with_capacity(n + 1);
        out.push(eta.norm_squared());
        for _ in 0..n {
            let xi = sample_xi(model, &mut chan);
            eta = (a + &bk * xi) * eta;
            out.push(eta.norm_squared());
        }
        Ok(out)
    };
    let mut acc = MomentAccumulator::new(n + 1);
    for_each_replica(realizations, threads, run, |s| acc.add(&s))?;
    let (mean, stderr) = acc.finish();
    Ok(MomentSeries { mean, stderr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{linear_system, Lorentz, SaturatedLorentz};

    fn lorentz(alpha: f64, beta: f64) -> BuiltinSystem {
        BuiltinSystem::SaturatedLorentz(SaturatedLorentz::new(
            LorentzParams::new(alpha, beta).unwrap(),
        ))
    }

    fn scalar_lti() -> BuiltinSystem {
        BuiltinSystem::Linear(
            linear_system(
                Matrix::from_element(1, 1, 2.0),
                Matrix::from_element(1, 1, 1.0),
            )
            .unwrap(),
        )
    }

    #[test]
    fn canceller_examples() {
        let p = LorentzParams::new(1.0, 0.5).unwrap();
        assert_eq!(cancel_controller(&State::zeros(2), &p), 0.0);
        assert!((cancel_controller(&State::from_row_slice(&[1.0, 0.0]), &p) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn canceller_zeroes_first_coordinate() {
        let sys = BuiltinSystem::Lorentz(Lorentz::new(LorentzParams::new(1.25, 0.75).unwrap()));
        let zero = State::zeros(1);
        let gamma = State::zeros(2);
        for i in -5..=5 {
            for j in -5..=5 {
                let z = State::from_row_slice(&[i as f64 * 0.37, j as f64 * 0.41]);
                let next = closed_loop_step(
                    &z,
                    &sys,
                    &Controller::CancelNonlinearity,
                    1.0,
                    &zero,
                    &gamma,
                )
                .unwrap();
                assert_eq!(next[0], 0.0);
                let u = Controller::CancelNonlinearity.control(&sys, &z).unwrap()[0];
                assert_eq!(u, cancel_controller(&z, sys.lorentz_params().unwrap()));
            }
        }
    }

    #[test]
    fn step_reductions() {
        let sys = lorentz(1.25, 0.75);
        let z = State::from_row_slice(&[0.3, -0.4]);
        let gamma = State::from_row_slice(&[0.01, 0.02]);
        let zero = State::zeros(1);
        let erased = closed_loop_step(
            &z,
            &sys,
            &Controller::CancelNonlinearity,
            0.0,
            &zero,
            &gamma,
        )
        .unwrap();
        assert_eq!(erased, sys.step(&z) + &gamma);
        let open =
            closed_loop_step(&z, &sys, &Controller::None, 1.0, &zero, &State::zeros(2)).unwrap();
        assert_eq!(open, sys.step(&z));
    }

    #[test]
    fn step_flags_divergence() {
        let sys = scalar_lti();
        let z = State::from_element(1, 1e9);
        let r = closed_loop_step(
            &z,
            &sys,
            &Controller::None,
            1.0,
            &State::zeros(1),
            &State::zeros(1),
        );
        assert!(matches!(r, Err(Error::Diverged { .. })));
    }

    #[test]
    fn slave_tracks_master_on_ideal_channel() {
        let sys = lorentz(1.25, 0.75);
        let mut cfg = ExperimentConfig::new(sys.clone(), ChannelModel::bernoulli(1.0).unwrap());
        cfg.master = Some(sys);
        cfg.n_realizations = 1;
        cfg.n_steps = 200;
        cfg.init.warmup = 0;
        let w0 = State::from_row_slice(&[0.2, -0.1]);
        cfg.init.w0 = Some(w0.clone());
        cfg.init.x0 = Some(w0.clone());
        cfg.init.y0 = Some(w0);
        let run = simulate_master_slave(&cfg, 0).unwrap();
        assert!(run.error.iter().all(|e| e.norm() == 0.0));
        assert_eq!(run.master.len(), run.x.len());
        for (m, x) in run.master.iter().zip(&run.x) {
            assert_eq!(m, x);
        }
    }

    #[test]
    fn deadbeat_lti_ensemble() {
        let mut cfg = ExperimentConfig::new(scalar_lti(), ChannelModel::bernoulli(1.0).unwrap());
        cfg.controller = Controller::LinearGain(Matrix::from_element(1, 1, -2.0));
        cfg.n_realizations = 50;
        cfg.n_steps = 10;
        let stats = ensemble_error_stats(&cfg).unwrap();
        assert!(stats.mse[0] > 0.0);
        assert!(stats.mse[1..].iter().all(|&m| m == 0.0));
        assert_eq!(stats.beta_hat, 0.0);
        assert_eq!(stats.histograms[0].total(), 50);
    }

    #[test]
    fn histogram_bins() {
        let h = Histogram::symmetric(&[-1.0, 0.0, 0.5, 1.0], 101);
        assert_eq!(h.edges.len(), 102);
        assert_eq!(h.total(), 4);
        assert_eq!(h.counts[50], 1);
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[100], 1);
        let zero = Histogram::symmetric(&[0.0, 0.0], 101);
        assert_eq!(zero.edges[0], -1.0);
        assert_eq!(zero.counts[50], 2);
    }

    #[test]
    fn scalar_covariance_recursion() {
        let a = Matrix::from_element(1, 1, 2.0);
        let b = Matrix::from_element(1, 1, 1.0);
        let k = Matrix::from_element(1, 1, -2.0);
        for p in [0.3, 0.6, 0.9] {
            let t =
                linearized_covariance_trace(&a, &b, &k, &ChannelModel::bernoulli(p).unwrap(), 10)
                    .unwrap();
            for (n, tr) in t.traces.iter().enumerate() {
                let exact = (4.0 * (1.0 - p)).powi(n as i32);
                assert!((tr - exact).abs() <= 1e-12 * exact.max(1.0));
            }
        }
        let open = linearized_covariance_trace(
            &a,
            &b,
            &Matrix::zeros(1, 1),
            &ChannelModel::bernoulli(0.5).unwrap(),
            5000,
        )
        .unwrap();
        assert_eq!(open.status, CovarianceStatus::Diverged);
        assert_eq!(open.final_trace(), f64::INFINITY);
    }

    #[test]
    fn covariance_flip_between_074_and_076() {
        let a = Matrix::from_element(1, 1, 2.0);
        let b = Matrix::from_element(1, 1, 1.0);
        let k = Matrix::from_element(1, 1, -2.0);
        let run = |p| {
            linearized_covariance_trace(&a, &b, &k, &ChannelModel::bernoulli(p).unwrap(), 5000)
                .unwrap()
                .status
        };
        assert_eq!(run(0.74), CovarianceStatus::Diverged);
        assert!(matches!(run(0.76), CovarianceStatus::Converged(_)));
    }

    #[test]
    fn threshold_from_grid() {
        use CovarianceStatus::*;
        let pts = [
            (0.1, Diverged),
            (0.2, Diverged),
            (0.3, Undecided),
            (0.4, Converged(1.0)),
            (0.5, Converged(1.0)),
        ];
        assert!((divergence_threshold(&pts).unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(divergence_threshold(&pts[3..]), None);
        assert_eq!(divergence_threshold(&pts[..2]), None);
    }

    #[test]
    fn decay_fit() {
        let mse: Vec<f64> = (0..100).map(|n| 0.5f64.powi(n)).collect();
        assert!((fit_decay_rate(&mse) - 0.5).abs() < 1e-9);
        let flat = vec![2.0; 50];
        assert!((fit_decay_rate(&flat) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn replica_out_of_range() {
        let cfg = ExperimentConfig::new(scalar_lti(), ChannelModel::bernoulli(1.0).unwrap());
        assert!(simulate_master_slave(&cfg, 3000).is_err());
    }
}
