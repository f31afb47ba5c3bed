use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use netstab_core::channel::{ChannelModel, NoiseModel, SeededStream, StreamTag, TwoMomentFamily};
use netstab_core::dynamics::{
    linear_system, BuiltinSystem, DiscreteSystem, Lorentz, LorentzParams, SaturatedLorentz,
};
use netstab_core::limits::qos_report;
use netstab_core::linalg::spd_inverse;
use netstab_core::lyapunov::{
    estimate_spectrum, settle_on_attractor, LyapunovSpectrum, SpectrumOptions,
};
use netstab_core::riccati::{optimal_gain, solve_dare, DEFAULT_MAX_ITER, DEFAULT_TOL};
use netstab_core::simulate::{
    divergence_threshold, ensemble_error_stats, linearized_covariance_trace, second_moment_check,
    Controller, ExperimentConfig, InitialConditions,
};
use netstab_core::{Matrix, State};

use crate::config::parse_config;
use crate::error::CliError;
use crate::format::{g12, row};
use crate::manifest::{self, RunManifest};
use crate::settings::{resolve, CommandKind, Settings};
use crate::spectrum_csv::parse_spectrum_csv;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

const SETTLE_TRIES: usize = 100;

/// Result of a finished command: the manifest written to the output directory
/// and a human-readable summary for stdout.
#[derive(Debug, Clone)]
pub struct Completed {
    pub manifest: RunManifest,
    pub report: String,
}

struct Outputs {
    dir: PathBuf,
    names: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            names: Vec::new(),
        })
    }

    fn csv(&mut self, name: &str, header: &str, rows: &[String]) -> Result<(), CliError> {
        let mut text = String::with_capacity(header.len() + 32 * rows.len());
        text.push_str(header);
        text.push('\n');
        for r in rows {
            text.push_str(r);
            text.push('\n');
        }
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        self.names.push(name.to_string());
        Ok(())
    }
}

fn summary_rows(pairs: &[(&str, String)]) -> Vec<String> {
    pairs.iter().map(|(k, v)| row([*k, v.as_str()])).collect()
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

fn lorentz_params(s: &Settings, alpha: &str, beta: &str) -> Result<LorentzParams, CliError> {
    Ok(LorentzParams::with_saturation(
        s.f64(alpha)?,
        s.f64(beta)?,
        s.f64("k-sat")?,
        s.f64("l-sat")?,
        s.f64("m-sat")?,
    )?)
}

fn build_system(s: &Settings, alpha: &str, beta: &str) -> Result<BuiltinSystem, CliError> {
    match s.choice("system", &["saturated-lorentz", "lorentz", "linear"])? {
        "saturated-lorentz" => Ok(BuiltinSystem::SaturatedLorentz(SaturatedLorentz::new(
            lorentz_params(s, alpha, beta)?,
        ))),
        "lorentz" => Ok(BuiltinSystem::Lorentz(Lorentz::new(lorentz_params(
            s, alpha, beta,
        )?))),
        _ => {
            let a = s
                .matrix("A")?
                .ok_or_else(|| CliError::key("A", "required for system=linear"))?;
            let b = match s.matrix("B")? {
                Some(b) => b,
                None => Matrix::from_fn(a.nrows(), 1, |i, _| if i == 0 { 1.0 } else { 0.0 }),
            };
            Ok(BuiltinSystem::Linear(linear_system(a, b)?))
        }
    }
}

fn check_len(key: &str, v: Option<State>, n: usize) -> Result<Option<State>, CliError> {
    match v {
        Some(v) if v.len() != n => Err(CliError::key(
            key,
            format!("has length {}, expected {n}", v.len()),
        )),
        v => Ok(v),
    }
}

/// Resolves settings from a config file, the environment and explicit flags.
pub fn load_settings(
    kind: CommandKind,
    config_file: Option<&Path>,
    env_seed: Option<&str>,
    flags: &std::collections::BTreeMap<String, String>,
) -> Result<Settings, CliError> {
    let file = match config_file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            Some(parse_config(&text).map_err(|source| CliError::ConfigFile {
                path: path.to_path_buf(),
                source,
            })?)
        }
        None => None,
    };
    resolve(kind, file.as_ref(), env_seed, flags)
}

/// Runs the command described by `settings`, writing CSVs and the manifest to
/// `out_dir`.
pub fn execute(settings: &Settings, out_dir: &Path) -> Result<Completed, CliError> {
    let start = Instant::now();
    let mut out = Outputs::new(out_dir)?;
    let report = match settings.kind {
        CommandKind::Lyapunov => lyapunov(settings, &mut out)?,
        CommandKind::CriticalP => critical_p(settings, &mut out)?,
        CommandKind::Simulate => simulate(settings, &mut out)?,
        CommandKind::Sweep => sweep(settings, &mut out)?,
    };
    let manifest = RunManifest {
        command: settings.kind.name().to_string(),
        version: VERSION.to_string(),
        master_seed: settings.u64("seed")?,
        duration_ms: start.elapsed().as_millis() as u64,
        outputs: out.names,
        config: settings.values.clone(),
    };
    let path = out_dir.join(manifest::FILE_NAME);
    fs::write(&path, manifest.render()).map_err(|e| CliError::io(&path, e))?;
    Ok(Completed { manifest, report })
}

/// Re-runs a manifest with its recorded configuration. `NETSTAB_SEED` is not
/// consulted; `threads` only changes scheduling.
pub fn replay(
    manifest_path: &Path,
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<Completed, CliError> {
    let text = fs::read_to_string(manifest_path).map_err(|e| CliError::io(manifest_path, e))?;
    let recorded = RunManifest::parse(&text).map_err(|source| CliError::Manifest {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let kind = CommandKind::from_name(&recorded.command).ok_or_else(|| {
        CliError::key("command", format!("unknown command `{}`", recorded.command))
    })?;
    let mut flags = std::collections::BTreeMap::new();
    flags.insert("seed".to_string(), recorded.master_seed.to_string());
    if let Some(t) = threads {
        if kind.keys().iter().any(|k| k.name == "threads") {
            flags.insert("threads".to_string(), t.to_string());
        }
    }
    let settings = resolve(kind, Some(&recorded.config), None, &flags)?;
    execute(&settings, out_dir)
}

fn spectrum_options(s: &Settings) -> Result<SpectrumOptions, CliError> {
    let tol = s.f64("tol")?;
    if tol <= 0.0 {
        return Err(CliError::key("tol", "must be positive"));
    }
    Ok(SpectrumOptions {
        n_steps: s.usize("steps")?,
        burn_in: s.usize("burn-in")?,
        reorth_every: s.usize("reorth-every")?,
        record_every: s.usize("record-every")?,
        tol,
    })
}

fn starting_point(s: &Settings, system: &BuiltinSystem) -> Result<State, CliError> {
    let n = system.dim();
    if let Some(x0) = check_len("x0", s.vector("x0")?, n)? {
        return Ok(x0);
    }
    if matches!(system, BuiltinSystem::Linear(_)) {
        return Ok(State::zeros(n));
    }
    let radius = s.f64("radius")?;
    if radius < 0.0 {
        return Err(CliError::key("radius", "must be nonnegative"));
    }
    let mut stream = SeededStream::new(s.u64("seed")?, 0, StreamTag::Init);
    Ok(settle_on_attractor(
        system,
        &mut stream,
        radius,
        s.usize("burn-in")?,
        SETTLE_TRIES,
    )?)
}

fn compute_spectrum(s: &Settings, system: &BuiltinSystem) -> Result<LyapunovSpectrum, CliError> {
    let opts = spectrum_options(s)?;
    let x0 = starting_point(s, system)?;
    Ok(estimate_spectrum(system, &x0, &opts)?)
}

fn lyapunov(s: &Settings, out: &mut Outputs) -> Result<String, CliError> {
    let system = build_system(s, "alpha", "beta")?;
    let spec = compute_spectrum(s, &system)?;
    let n = spec.exponents.len();

    let mut header = String::from("step");
    for i in 1..=n {
        write!(header, ",exp{i}").unwrap();
    }
    let mut series: Vec<String> = spec
        .history
        .iter()
        .map(|(step, e)| row(std::iter::once(step.to_string()).chain(e.iter().map(|v| g12(*v)))))
        .collect();
    if spec.history.last().map(|(step, _)| *step) != Some(spec.n_steps) {
        series
            .push(row(std::iter::once(spec.n_steps.to_string())
                .chain(spec.exponents.iter().map(|v| g12(*v)))));
    }
    out.csv("spectrum.csv", &header, &series)?;

    let finals: Vec<String> = spec
        .exponents
        .iter()
        .zip(&spec.multipliers)
        .enumerate()
        .map(|(i, (e, m))| row([(i + 1).to_string(), g12(*e), g12(*m)]))
        .collect();
    out.csv("spectrum_final.csv", "index,exponent,multiplier", &finals)?;

    out.csv(
        "summary.csv",
        "metric,value",
        &summary_rows(&[
            ("top_exponent", g12(spec.top())),
            ("top_multiplier", g12(spec.top().exp())),
            ("exponent_sum", g12(spec.sum())),
            ("tail_variation", g12(spec.tail_variation)),
            ("converged", flag(spec.converged)),
            ("n_steps", spec.n_steps.to_string()),
            ("burn_in", spec.burn_in.to_string()),
        ]),
    )?;

    let mut report = format!(
        "top exponent {}\ntop multiplier {}\nexponents",
        g12(spec.top()),
        g12(spec.top().exp())
    );
    for e in &spec.exponents {
        write!(report, " {}", g12(*e)).unwrap();
    }
    if !spec.converged {
        write!(
            report,
            "\nnot converged: tail variation {}",
            g12(spec.tail_variation)
        )
        .unwrap();
    }
    Ok(report)
}

fn spectrum_from_file(path: &Path) -> Result<LyapunovSpectrum, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut exponents = parse_spectrum_csv(&text).map_err(|source| CliError::Spectrum {
        path: path.to_path_buf(),
        source,
    })?;
    exponents.sort_by(|a, b| b.total_cmp(a));
    Ok(LyapunovSpectrum {
        multipliers: exponents.iter().map(|e| e.exp()).collect(),
        exponents,
        n_steps: 0,
        burn_in: 0,
        tail_variation: 0.0,
        converged: true,
        history: Vec::new(),
    })
}

fn critical_p(s: &Settings, out: &mut Outputs) -> Result<String, CliError> {
    let system = build_system(s, "alpha", "beta")?;
    let spec = match s.str("spectrum-file") {
        "" => compute_spectrum(s, &system)?,
        path => {
            let spec = spectrum_from_file(Path::new(path))?;
            if spec.exponents.len() != system.dim() {
                return Err(CliError::key(
                    "spectrum-file",
                    format!(
                        "has {} exponents, system dimension is {}",
                        spec.exponents.len(),
                        system.dim()
                    ),
                ));
            }
            spec
        }
    };
    let q = qos_report(&system, &spec)?;
    let cells = [
        g12(q.p_star_eig),
        g12(q.p_star_lya),
        g12(q.p_star),
        q.dominant.as_str().to_string(),
        q.d.to_string(),
        q.regime.as_str().to_string(),
        g12(q.inputs_product_eig),
        g12(q.inputs_product_lya),
    ];
    out.csv(
        "qos.csv",
        "p_star_eig,p_star_lya,p_star,dominant,d,regime,inputs_product_eig,inputs_product_lya",
        &[row(&cells)],
    )?;
    Ok(format!(
        "p_star_eig {}\np_star_lya {}\np_star {}\ndominant {}",
        cells[0], cells[1], cells[2], cells[3]
    ))
}

fn channel(s: &Settings) -> Result<ChannelModel, CliError> {
    let family = match s.choice("channel", &["bernoulli", "gaussian", "two-point"])? {
        "bernoulli" => return Ok(ChannelModel::bernoulli(s.f64("p")?)?),
        "gaussian" => TwoMomentFamily::Gaussian,
        _ => TwoMomentFamily::TwoPoint,
    };
    let moment = |key: &str| {
        if s.str(key).trim().is_empty() {
            Err(CliError::key(key, "required for this channel"))
        } else {
            s.f64(key)
        }
    };
    Ok(ChannelModel::two_moment(
        moment("mu")?,
        moment("sigma2")?,
        family,
    )?)
}

fn experiment(s: &Settings) -> Result<ExperimentConfig, CliError> {
    let slave = build_system(s, "alpha-s", "beta-s")?;
    let n = slave.dim();
    let mut cfg = ExperimentConfig::new(slave, channel(s)?);
    if s.str("master") == "on" {
        if s.str("system") == "linear" {
            cfg.master = Some(cfg.slave.clone());
        } else {
            cfg.master = Some(build_system(s, "alpha-m", "beta-m")?);
        }
    }
    cfg.noise = NoiseModel::new(s.f64("noise")?)?;
    cfg.n_steps = s.usize("steps")?;
    cfg.n_realizations = s.usize("realizations")?;
    cfg.master_seed = s.u64("seed")?;
    cfg.threads = s.usize("threads")?;
    cfg.controller = match s.choice("controller", &["cancel", "gain", "none"])? {
        "cancel" => Controller::CancelNonlinearity,
        "gain" => Controller::LinearGain(
            s.matrix("K")?
                .ok_or_else(|| CliError::key("K", "required for controller=gain"))?,
        ),
        _ => Controller::None,
    };
    cfg.init = InitialConditions {
        x0: check_len("x0", s.vector("x0")?, n)?,
        y0: check_len("y0", s.vector("y0")?, n)?,
        w0: check_len("w0", s.vector("w0")?, n)?,
        radius: s.f64("radius")?,
        master_radius: s.f64("master-radius")?,
        warmup: s.usize("warmup")?,
    };
    Ok(cfg)
}

fn mse_rows(mse: &[f64], stderr: &[f64]) -> Vec<String> {
    mse.iter()
        .zip(stderr)
        .enumerate()
        .map(|(i, (m, e))| row([i.to_string(), g12(*m), g12(*e)]))
        .collect()
}

fn simulate(s: &Settings, out: &mut Outputs) -> Result<String, CliError> {
    let cfg = experiment(s)?;
    match s.choice("experiment", &["master-slave", "second-moment"])? {
        "master-slave" => {
            let stats = ensemble_error_stats(&cfg)?;
            out.csv(
                "mse.csv",
                "step,mse,stderr",
                &mse_rows(&stats.mse, &stats.mse_stderr),
            )?;
            for (k, h) in stats.histograms.iter().enumerate() {
                let rows: Vec<String> = h
                    .counts
                    .iter()
                    .enumerate()
                    .map(|(i, c)| row([g12(h.edges[i]), g12(h.edges[i + 1]), c.to_string()]))
                    .collect();
                out.csv(
                    &format!("histogram_{}.csv", k + 1),
                    "bin_left,bin_right,count",
                    &rows,
                )?;
            }
            let mut pairs = vec![
                ("beta_hat", g12(stats.beta_hat)),
                ("diverged_count", stats.diverged_count.to_string()),
                ("n_realizations", stats.n_realizations.to_string()),
                (
                    "total_terminal_variance",
                    g12(stats.total_terminal_variance),
                ),
            ];
            let names: Vec<String> = (1..=stats.terminal_variance.len())
                .map(|k| format!("terminal_variance_{k}"))
                .collect();
            for (name, v) in names.iter().zip(&stats.terminal_variance) {
                pairs.push((name.as_str(), g12(*v)));
            }
            out.csv("summary.csv", "metric,value", &summary_rows(&pairs))?;
            Ok(format!(
                "beta_hat {}\ndiverged {} of {}\nterminal error variance {}",
                g12(stats.beta_hat),
                stats.diverged_count,
                stats.n_realizations,
                g12(stats.total_terminal_variance)
            ))
        }
        _ => {
            let r = second_moment_check(&cfg)?;
            out.csv(
                "mse.csv",
                "step,mse,stderr",
                &mse_rows(&r.mse, &r.mse_stderr),
            )?;
            out.csv(
                "summary.csv",
                "metric,value",
                &summary_rows(&[
                    ("bounded", flag(r.bounded)),
                    ("sup_estimate", g12(r.sup_estimate)),
                    ("tail_slope", g12(r.tail_slope)),
                    ("tail_slope_stderr", g12(r.tail_slope_stderr)),
                    ("beta_hat", g12(r.beta_hat)),
                    ("diverged_count", r.diverged_count.to_string()),
                ]),
            )?;
            Ok(format!(
                "bounded {}\nsup E|x|^2 {}\nbeta_hat {}\ndiverged {}",
                if r.bounded { "yes" } else { "no" },
                g12(r.sup_estimate),
                g12(r.beta_hat),
                r.diverged_count
            ))
        }
    }
}

/// `start, start + step, ...` up to `stop`, each rounded to 10 decimals so
/// grid points print cleanly.
pub fn p_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    (0..count)
        .map(|k| ((start + k as f64 * step) * 1e10).round() / 1e10)
        .collect()
}

fn sweep(s: &Settings, out: &mut Outputs) -> Result<String, CliError> {
    let system = build_system(s, "alpha", "beta")?;
    let (start, stop, step) = (s.f64("p-start")?, s.f64("p-stop")?, s.f64("p-step")?);
    for (key, v) in [("p-start", start), ("p-stop", stop)] {
        if !(v > 0.0 && v <= 1.0) {
            return Err(CliError::key(key, "must lie in (0, 1]"));
        }
    }
    if stop < start {
        return Err(CliError::key("p-stop", "must not be below p-start"));
    }
    if step <= 0.0 {
        return Err(CliError::key("p-step", "must be positive"));
    }
    let horizon = s.usize("horizon")?;
    let n = system.dim();
    let a = system.jacobian(&State::zeros(n));
    let b = system.input_matrix().clone();
    let gain = s.choice("gain", &["dare", "canceller", "zero"])?;
    let dare = if gain == "dare" {
        Some(
            solve_dare(
                &a,
                &b,
                &Matrix::identity(n, n),
                DEFAULT_TOL,
                DEFAULT_MAX_ITER,
            )?
            .p,
        )
    } else {
        None
    };
    let canceller = if gain == "canceller" {
        Some(-(spd_inverse(&(b.transpose() * &b), "B'B")? * b.transpose() * &a))
    } else {
        None
    };

    let mut points = Vec::new();
    let mut rows = Vec::new();
    for p in p_grid(start, stop, step) {
        let model = ChannelModel::bernoulli(p)?;
        let k = match (&dare, &canceller) {
            (Some(pm), _) => optimal_gain(pm, &a, &b, &model)?,
            (_, Some(k)) => k.clone(),
            _ => Matrix::zeros(b.ncols(), n),
        };
        let trace = linearized_covariance_trace(&a, &b, &k, &model, horizon)?;
        rows.push(row([
            g12(p),
            g12(trace.final_trace()),
            trace.status.as_str().to_string(),
        ]));
        points.push((p, trace.status));
    }
    out.csv("sweep.csv", "p,final_trace,status", &rows)?;
    let diverged = points
        .iter()
        .filter(|(_, st)| st.as_str() == "diverged")
        .count();
    let mut report = format!("{} grid points, {} diverged", points.len(), diverged);
    match divergence_threshold(&points) {
        Some(t) => write!(report, "\nthreshold {}", g12(t)).unwrap(),
        None => report.push_str("\nno diverged-to-stable transition on the grid"),
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_clean() {
        let g = p_grid(0.5, 0.8, 0.01);
        assert_eq!(g.len(), 31);
        assert_eq!(g[13], 0.63);
        assert_eq!(*g.last().unwrap(), 0.8);
        assert_eq!(p_grid(0.7, 0.7, 0.01), vec![0.7]);
    }

    #[test]
    fn linear_b_defaults_to_first_axis() {
        let mut flags = std::collections::BTreeMap::new();
        flags.insert("system".to_string(), "linear".to_string());
        flags.insert("A".to_string(), "2 0; 0 0.5".to_string());
        let s = resolve(CommandKind::Sweep, None, None, &flags).unwrap();
        let sys = build_system(&s, "alpha", "beta").unwrap();
        assert_eq!(
            sys.input_matrix(),
            &Matrix::from_column_slice(2, 1, &[1.0, 0.0])
        );
    }

    #[test]
    fn linear_requires_a() {
        let mut flags = std::collections::BTreeMap::new();
        flags.insert("system".to_string(), "linear".to_string());
        let s = resolve(CommandKind::Lyapunov, None, None, &flags).unwrap();
        let err = build_system(&s, "alpha", "beta").unwrap_err();
        assert!(err.to_string().contains("`A`"));
        assert_eq!(err.exit_code(), 2);
    }
}
