//! Key-value config files and run manifests.
//!
//! Config files hold one `key = value` per line; `#` starts a comment and
//! blank lines are ignored. Precedence is CLI flags over config file over
//! built-in defaults, and the merged result is what the manifest records.
//!
//! A run manifest is itself a valid config file: every config field appears
//! as a `key = value` line, while dataset checksums, the code version, and
//! per-phase timings ride along as comments. Re-running with
//! `--config manifest.txt` on the same data reproduces the run byte for
//! byte on the deterministic path.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::Activation;
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected 'key = value'")]
    Syntax { path: PathBuf, line: usize },
    #[error("unknown config key '{key}'")]
    UnknownKey { key: String },
    #[error("config key '{key}': {message}")]
    BadValue { key: String, message: String },
}

/// Parse a config file into key/value pairs in file order (later duplicates
/// override earlier ones when applied).
pub fn parse_config_file(path: &Path) -> Result<Vec<(String, String)>, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            path: path.to_path_buf(),
            line: idx + 1,
        })?;
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        message: e.to_string(),
    })
}

/// Apply one `key = value` pair to a config.
pub fn set_config_key(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<(), ConfigError> {
    match key {
        "d" => cfg.d = parse(key, value)?,
        "k" => cfg.k = parse(key, value)?,
        "lr" => cfg.lr = parse(key, value)?,
        "lr_decay" => cfg.lr_decay = parse(key, value)?,
        "epochs" => cfg.epochs = parse(key, value)?,
        "batch_size" => cfg.batch_size = parse(key, value)?,
        "dropout_input" => cfg.dropout.0 = parse(key, value)?,
        "dropout_hidden" => cfg.dropout.1 = parse(key, value)?,
        "dropout_output" => cfg.dropout.2 = parse(key, value)?,
        "label_smoothing" => cfg.label_smoothing = parse(key, value)?,
        "activation" => {
            cfg.activation = value.parse::<Activation>().map_err(|e| ConfigError::BadValue {
                key: key.to_string(),
                message: e,
            })?
        }
        "batch_norm" => cfg.batch_norm = parse(key, value)?,
        "seed" => cfg.seed = parse(key, value)?,
        "adam_beta1" => cfg.adam_beta1 = parse(key, value)?,
        "adam_beta2" => cfg.adam_beta2 = parse(key, value)?,
        "adam_eps" => cfg.adam_eps = parse(key, value)?,
        "valid_every" => cfg.valid_every = parse(key, value)?,
        "keep_best" => cfg.keep_best = parse(key, value)?,
        _ => {
            return Err(ConfigError::UnknownKey {
                key: key.to_string(),
            })
        }
    }
    Ok(())
}

/// Every config field as `(key, value)` in a fixed order.
pub fn config_entries(cfg: &TrainConfig) -> Vec<(&'static str, String)> {
    vec![
        ("d", cfg.d.to_string()),
        ("k", cfg.k.to_string()),
        ("lr", format!("{}", cfg.lr)),
        ("lr_decay", format!("{}", cfg.lr_decay)),
        ("epochs", cfg.epochs.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
        ("dropout_input", format!("{}", cfg.dropout.0)),
        ("dropout_hidden", format!("{}", cfg.dropout.1)),
        ("dropout_output", format!("{}", cfg.dropout.2)),
        ("label_smoothing", format!("{}", cfg.label_smoothing)),
        ("activation", cfg.activation.to_string()),
        ("batch_norm", cfg.batch_norm.to_string()),
        ("seed", cfg.seed.to_string()),
        ("adam_beta1", format!("{}", cfg.adam_beta1)),
        ("adam_beta2", format!("{}", cfg.adam_beta2)),
        ("adam_eps", format!("{}", cfg.adam_eps)),
        ("valid_every", cfg.valid_every.to_string()),
        ("keep_best", cfg.keep_best.to_string()),
    ]
}

/// Everything needed to relaunch and audit a run.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// `(file name, crc32 of its bytes)` per dataset file.
    pub dataset_checksums: Vec<(String, u32)>,
    pub code_version: String,
    /// `(phase, seconds)` wall-clock timings.
    pub timings: Vec<(String, f64)>,
}

impl RunManifest {
    /// CRC32 the three split files of a dataset directory.
    pub fn checksum_dataset(dir: &Path) -> std::io::Result<Vec<(String, u32)>> {
        let mut out = Vec::new();
        for name in ["train.txt", "valid.txt", "test.txt"] {
            let bytes = fs::read(dir.join(name))?;
            out.push((name.to_string(), crc32fast::hash(&bytes)));
        }
        Ok(out)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# run manifest (also a valid --config file)");
        let _ = writeln!(s, "# code.version = neptune {}", self.code_version);
        let _ = writeln!(s, "# data.dir = {}", self.data_dir.display());
        let _ = writeln!(s, "# out.dir = {}", self.out_dir.display());
        for (name, crc) in &self.dataset_checksums {
            let _ = writeln!(s, "# data.{}.crc32 = {:#010x}", name, crc);
        }
        for (phase, seconds) in &self.timings {
            let _ = writeln!(s, "# timing.{}_s = {:.3}", phase, seconds);
        }
        for (key, value) in config_entries(&self.config) {
            let _ = writeln!(s, "{} = {}", key, value);
        }
        s
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, self.render())
    }
}

/// Merge precedence: defaults, then the config file (if any), then CLI
/// overrides, applied in that order.
pub fn merge_config(
    file: Option<&Path>,
    overrides: &[(&'static str, String)],
) -> Result<TrainConfig, ConfigError> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = file {
        for (key, value) in parse_config_file(path)? {
            set_config_key(&mut cfg, &key, &value)?;
        }
    }
    for (key, value) in overrides {
        set_config_key(&mut cfg, key, value)?;
    }
    Ok(cfg)
}

/// Round-trip helper for tests and the CLI: a config rendered as entries and
/// re-applied reproduces itself.
pub fn config_from_entries(entries: &[(String, String)]) -> Result<TrainConfig, ConfigError> {
    let mut cfg = TrainConfig::default();
    for (key, value) in entries {
        set_config_key(&mut cfg, key, value)?;
    }
    Ok(cfg)
}
