//! Per-command option tables and resolution of defaults, config file,
//! `NETSTAB_SEED` and flags into one fully materialized settings map.

use std::collections::BTreeMap;
use std::str::FromStr;

use netstab_core::{Matrix, State};

use crate::error::CliError;
use crate::matrix::{parse_matrix, parse_vector};

pub const SEED_ENV: &str = "NETSTAB_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeySpec {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> KeySpec {
    KeySpec {
        name,
        default,
        help,
    }
}

const PLANT: &[KeySpec] = &[
    key(
        "system",
        "saturated-lorentz",
        "saturated-lorentz, lorentz or linear",
    ),
    key("alpha", "1.25", "Lorentz alpha"),
    key("beta", "0.75", "Lorentz beta"),
];

const SHAPE: &[KeySpec] = &[
    key("k-sat", "100", "saturation steepness k"),
    key("l-sat", "50", "far-field gain L"),
    key("m-sat", "100", "saturation radius M"),
    key(
        "A",
        "",
        "state matrix for system=linear, e.g. \"2 0; 0 0.5\"",
    ),
    key(
        "B",
        "",
        "input matrix for system=linear (default: first unit column)",
    ),
];

const SPECTRUM: &[KeySpec] = &[
    key("steps", "1000000", "steps accumulated after burn-in"),
    key("burn-in", "1000", "steps discarded first"),
    key("reorth-every", "1", "QR re-orthonormalization period"),
    key(
        "record-every",
        "1000",
        "running-exponent sampling period (0: off)",
    ),
    key(
        "tol",
        "0.001",
        "convergence threshold on the tail variation",
    ),
    key("radius", "5", "ball radius for random starting points"),
    key(
        "x0",
        "",
        "starting point (default: random, or the origin for linear)",
    ),
];

const SEED: KeySpec = key("seed", "0", "master seed (env NETSTAB_SEED)");

const SIMULATE: &[KeySpec] = &[
    key(
        "system",
        "saturated-lorentz",
        "saturated-lorentz, lorentz or linear",
    ),
    key("alpha-s", "1.25", "slave alpha"),
    key("beta-s", "0.75", "slave beta"),
    key("master", "auto", "on, off or auto (on for Lorentz systems)"),
    key("alpha-m", "", "master alpha (default: slave value)"),
    key("beta-m", "", "master beta (default: slave value)"),
    key("k-sat", "100", "saturation steepness k"),
    key("l-sat", "50", "far-field gain L"),
    key("m-sat", "100", "saturation radius M"),
    key("A", "", "state matrix for system=linear"),
    key(
        "B",
        "",
        "input matrix for system=linear (default: first unit column)",
    ),
    key("channel", "bernoulli", "bernoulli, gaussian or two-point"),
    key("p", "0.9", "non-erasure probability (bernoulli)"),
    key("mu", "", "channel mean (gaussian, two-point)"),
    key("sigma2", "", "channel variance (gaussian, two-point)"),
    key("noise", "0.1", "additive noise standard deviation"),
    key("steps", "100", "horizon"),
    key("realizations", "3000", "Monte Carlo replicas"),
    key("controller", "cancel", "cancel, gain or none"),
    key("K", "", "gain matrix for controller=gain"),
    key(
        "experiment",
        "master-slave",
        "master-slave or second-moment",
    ),
    key("x0", "", "first slave start (default: random in the ball)"),
    key("y0", "", "second slave start (default: random in the ball)"),
    key(
        "w0",
        "",
        "master start (default: random in the master ball)",
    ),
    key("radius", "2", "ball radius for slave starts"),
    key("master-radius", "0.5", "ball radius for the master start"),
    key("warmup", "500", "master steps before the slaves start"),
];

const SWEEP: &[KeySpec] = &[
    key("p-start", "0.5", "first p of the grid"),
    key("p-stop", "0.8", "last p of the grid"),
    key("p-step", "0.01", "grid spacing"),
    key("horizon", "5000", "covariance recursion steps"),
    key("gain", "dare", "dare, canceller or zero"),
];

const THREADS: KeySpec = key("threads", "0", "worker threads (0: all cores)");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Lyapunov,
    CriticalP,
    Simulate,
    Sweep,
}

impl CommandKind {
    pub const ALL: [CommandKind; 4] = [
        CommandKind::Lyapunov,
        CommandKind::CriticalP,
        CommandKind::Simulate,
        CommandKind::Sweep,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CommandKind::Lyapunov => "lyapunov",
            CommandKind::CriticalP => "critical-p",
            CommandKind::Simulate => "simulate",
            CommandKind::Sweep => "sweep",
        }
    }

    pub fn about(&self) -> &'static str {
        match self {
            CommandKind::Lyapunov => "Estimate the Lyapunov spectrum of a built-in system",
            CommandKind::CriticalP => "Critical non-erasure probabilities (local and global)",
            CommandKind::Simulate => "Monte Carlo master-slave or second-moment experiment",
            CommandKind::Sweep => "Linearized covariance trace over a grid of p",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn keys(&self) -> Vec<KeySpec> {
        let mut keys = Vec::new();
        match self {
            CommandKind::Lyapunov => {
                keys.extend_from_slice(PLANT);
                keys.extend_from_slice(SHAPE);
                keys.extend_from_slice(SPECTRUM);
            }
            CommandKind::CriticalP => {
                keys.extend_from_slice(PLANT);
                keys.extend_from_slice(SHAPE);
                keys.extend_from_slice(SPECTRUM);
                keys.push(key(
                    "spectrum-file",
                    "",
                    "reuse exponents from a spectrum CSV instead of estimating",
                ));
            }
            CommandKind::Simulate => {
                keys.extend_from_slice(SIMULATE);
                keys.push(THREADS);
            }
            CommandKind::Sweep => {
                keys.extend_from_slice(PLANT);
                keys.extend_from_slice(SHAPE);
                keys.extend_from_slice(SWEEP);
            }
        }
        keys.push(SEED);
        keys
    }
}

/// Resolved `key -> value` map; every key of the command is present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Settings {
    pub kind: CommandKind,
    pub values: BTreeMap<String, String>,
}

/// Precedence, lowest first: defaults, config file, `NETSTAB_SEED`, flags.
pub fn resolve(
    kind: CommandKind,
    file: Option<&BTreeMap<String, String>>,
    env_seed: Option<&str>,
    flags: &BTreeMap<String, String>,
) -> Result<Settings, CliError> {
    let specs = kind.keys();
    let mut values: BTreeMap<String, String> = specs
        .iter()
        .map(|s| (s.name.to_string(), s.default.to_string()))
        .collect();
    if let Some(file) = file {
        overlay(kind, &mut values, file, "config")?;
    }
    if let Some(seed) = env_seed {
        values.insert("seed".to_string(), seed.trim().to_string());
    }
    overlay(kind, &mut values, flags, "flag")?;
    let mut settings = Settings { kind, values };
    settings.derive_defaults()?;
    settings.u64("seed")?;
    Ok(settings)
}

fn overlay(
    kind: CommandKind,
    values: &mut BTreeMap<String, String>,
    source: &BTreeMap<String, String>,
    origin: &str,
) -> Result<(), CliError> {
    for (k, v) in source {
        match values.get_mut(k) {
            Some(slot) => *slot = v.clone(),
            None => {
                return Err(CliError::key(
                    k,
                    format!("unknown {origin} key for `{}`", kind.name()),
                ))
            }
        }
    }
    Ok(())
}

impl Settings {
    fn derive_defaults(&mut self) -> Result<(), CliError> {
        if self.kind != CommandKind::Simulate {
            return Ok(());
        }
        for (m, s) in [("alpha-m", "alpha-s"), ("beta-m", "beta-s")] {
            if self.str(m).is_empty() {
                let v = self.str(s).to_string();
                self.values.insert(m.to_string(), v);
            }
        }
        let master = match self.str("master") {
            "auto" => {
                if self.str("system") == "linear" {
                    "off"
                } else {
                    "on"
                }
            }
            "on" => "on",
            "off" => "off",
            other => {
                return Err(CliError::key(
                    "master",
                    format!("expected on, off or auto, got `{other}`"),
                ))
            }
        };
        self.values.insert("master".to_string(), master.to_string());
        Ok(())
    }

    pub fn str(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("setting `{key}` not declared"))
    }

    fn parsed<T: FromStr>(&self, key: &str, what: &str) -> Result<T, CliError> {
        let raw = self.str(key);
        raw.trim()
            .parse()
            .map_err(|_| CliError::key(key, format!("expected {what}, got `{raw}`")))
    }

    pub fn f64(&self, key: &str) -> Result<f64, CliError> {
        let v: f64 = self.parsed(key, "a number")?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(CliError::key(key, format!("`{v}` is not finite")))
        }
    }

    pub fn usize(&self, key: &str) -> Result<usize, CliError> {
        self.parsed(key, "a nonnegative integer")
    }

    pub fn u64(&self, key: &str) -> Result<u64, CliError> {
        self.parsed(key, "an unsigned 64-bit integer")
    }

    pub fn choice<'a>(&'a self, key: &str, options: &[&str]) -> Result<&'a str, CliError> {
        let v = self.str(key);
        if options.contains(&v) {
            Ok(v)
        } else {
            Err(CliError::key(
                key,
                format!("expected one of {}, got `{v}`", options.join(", ")),
            ))
        }
    }

    pub fn matrix(&self, key: &str) -> Result<Option<Matrix>, CliError> {
        let raw = self.str(key);
        if raw.trim().is_empty() {
            return Ok(None);
        }
        parse_matrix(raw)
            .map(Some)
            .map_err(|e| CliError::key(key, e.to_string()))
    }

    pub fn vector(&self, key: &str) -> Result<Option<State>, CliError> {
        let raw = self.str(key);
        if raw.trim().is_empty() {
            return Ok(None);
        }
        parse_vector(raw)
            .map(Some)
            .map_err(|e| CliError::key(key, e.to_string()))
    }
}
