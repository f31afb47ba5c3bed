//! Run manifests: `key=value` lines written next to every output set.
//!
//! ```text
//! command=simulate
//! version=0.1.0
//! master_seed=42
//! duration_ms=812
//! output=mse.csv
//! config.p=0.9
//! ```

use std::collections::BTreeMap;

use thiserror::Error;

use crate::config::valid_key;

pub const FILE_NAME: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub master_seed: u64,
    pub duration_ms: u64,
    /// Output files, relative to the manifest's directory.
    pub outputs: Vec<String>,
    /// Fully resolved configuration.
    pub config: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ManifestError {
    #[error("line {line}: expected `key=value`")]
    MissingEquals { line: usize },
    #[error("line {line}: unknown field `{key}`")]
    UnknownField { line: usize, key: String },
    #[error("line {line}: field `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: `{key}` is not an unsigned integer")]
    BadNumber { line: usize, key: String },
    #[error("line {line}: invalid output path `{path}`")]
    BadOutput { line: usize, path: String },
    #[error("missing field `{0}`")]
    Missing(&'static str),
}

impl RunManifest {
    pub fn render(&self) -> String {
        let mut s = format!(
            "command={}\nversion={}\nmaster_seed={}\nduration_ms={}\n",
            self.command, self.version, self.master_seed, self.duration_ms
        );
        for o in &self.outputs {
            s.push_str(&format!("output={o}\n"));
        }
        for (k, v) in &self.config {
            s.push_str(&format!("config.{k}={v}\n"));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        let mut command = None;
        let mut version = None;
        let mut master_seed = None;
        let mut duration_ms = None;
        let mut outputs = Vec::new();
        let mut config = BTreeMap::new();

        fn set<T>(slot: &mut Option<T>, v: T, line: usize, key: &str) -> Result<(), ManifestError> {
            if slot.replace(v).is_some() {
                return Err(ManifestError::Duplicate {
                    line,
                    key: key.to_string(),
                });
            }
            Ok(())
        }
        let number = |v: &str, line: usize, key: &str| {
            v.parse::<u64>().map_err(|_| ManifestError::BadNumber {
                line,
                key: key.to_string(),
            })
        };

        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let raw = raw.trim_end_matches('\r');
            if raw.trim().is_empty() {
                continue;
            }
            let (key, value) = raw
                .split_once('=')
                .ok_or(ManifestError::MissingEquals { line })?;
            match key {
                "command" => set(&mut command, value.to_string(), line, key)?,
                "version" => set(&mut version, value.to_string(), line, key)?,
                "master_seed" => set(&mut master_seed, number(value, line, key)?, line, key)?,
                "duration_ms" => set(&mut duration_ms, number(value, line, key)?, line, key)?,
                "output" => {
                    if !safe_relative(value) {
                        return Err(ManifestError::BadOutput {
                            line,
                            path: value.to_string(),
                        });
                    }
                    outputs.push(value.to_string());
                }
                _ => match key.strip_prefix("config.") {
                    Some(k) if valid_key(k) => {
                        if config.insert(k.to_string(), value.to_string()).is_some() {
                            return Err(ManifestError::Duplicate {
                                line,
                                key: key.to_string(),
                            });
                        }
                    }
                    _ => {
                        return Err(ManifestError::UnknownField {
                            line,
                            key: key.to_string(),
                        })
                    }
                },
            }
        }
        Ok(Self {
            command: command.ok_or(ManifestError::Missing("command"))?,
            version: version.ok_or(ManifestError::Missing("version"))?,
            master_seed: master_seed.ok_or(ManifestError::Missing("master_seed"))?,
            duration_ms: duration_ms.ok_or(ManifestError::Missing("duration_ms"))?,
            outputs,
            config,
        })
    }
}

/// A plain file name: no separators, no parent references.
fn safe_relative(path: &str) -> bool {
    !path.is_empty() && path != "." && path != ".." && !path.contains(['/', '\\', '\0'])
}
