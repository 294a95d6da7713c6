//! Flat `key = value` run configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Recognised keys:
//!
//! | key               | value                          | default     |
//! |-------------------|--------------------------------|-------------|
//! | `d_rff`           | feature dimension              | 2000        |
//! | `sigma`           | kernel bandwidth               | 1.0         |
//! | `convention`      | `bandwidth` / `frequency_scale`| `bandwidth` |
//! | `rff_seed`        | u64                            | 0           |
//! | `ridge`           | non-negative number            | 1e-4        |
//! | `ridge_mode`      | `relative` / `absolute`        | `relative`  |
//! | `temperature`     | positive number                | 1.0         |
//! | `threshold`       | number in [0, 1]               | 0.0         |
//! | `mean_mode`       | `literal` / `normalized`       | `literal`   |
//! | `covariance_rule` | `pooled` / `recursive`         | `pooled`    |
//! | `augment`         | `true` / `false`               | `true`      |
//! | `noise_scale`     | non-negative number            | 0.1         |
//! | `augment_seed`    | u64                            | 0           |
//! | `batch_size`      | positive integer               | 256         |
//! | `fused_inference` | `true` / `false`               | `false`     |

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::klda::{CovarianceRule, MeanMode, Ridge};
use crate::pipeline::RunConfig;
use crate::rff::FrequencyConvention;

fn value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse().map_err(|e| Error::Config {
        line,
        message: format!("bad value {raw:?} for {key}: {e}"),
    })
}

fn choice<T: Copy>(line: usize, key: &str, raw: &str, options: &[(&str, T)]) -> Result<T> {
    options
        .iter()
        .find(|(name, _)| *name == raw)
        .map(|&(_, v)| v)
        .ok_or_else(|| Error::Config {
            line,
            message: format!(
                "bad value {raw:?} for {key}; expected one of {}",
                options.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
            ),
        })
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    let mut ridge_value = 1e-4;
    let mut absolute = false;
    let mut seen = BTreeMap::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw_line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, raw) = trimmed.split_once('=').ok_or_else(|| Error::Config {
            line,
            message: format!("expected key = value, got {trimmed:?}"),
        })?;
        let (key, raw) = (key.trim(), raw.trim());
        if let Some(first) = seen.insert(key.to_string(), line) {
            return Err(Error::Config {
                line,
                message: format!("{key} already set on line {first}"),
            });
        }
        match key {
            "d_rff" => config.rff.feature_dim = value(line, key, raw)?,
            "sigma" => config.rff.sigma = value(line, key, raw)?,
            "convention" => config.rff.convention = value::<FrequencyConvention>(line, key, raw)?,
            "rff_seed" => config.rff.seed = value(line, key, raw)?,
            "ridge" => ridge_value = value(line, key, raw)?,
            "ridge_mode" => absolute = choice(line, key, raw, &[("relative", false), ("absolute", true)])?,
            "temperature" => config.temperature = value(line, key, raw)?,
            "threshold" => config.threshold = value(line, key, raw)?,
            "mean_mode" => {
                config.mean_mode = choice(
                    line,
                    key,
                    raw,
                    &[("literal", MeanMode::Literal), ("normalized", MeanMode::Normalized)],
                )?
            }
            "covariance_rule" => {
                config.covariance_rule = choice(
                    line,
                    key,
                    raw,
                    &[("pooled", CovarianceRule::Pooled), ("recursive", CovarianceRule::Recursive)],
                )?
            }
            "augment" => config.augment = value(line, key, raw)?,
            "noise_scale" => config.noise_scale = value(line, key, raw)?,
            "augment_seed" => config.augment_seed = value(line, key, raw)?,
            "batch_size" => config.batch_size = value(line, key, raw)?,
            "fused_inference" => config.fused_inference = value(line, key, raw)?,
            _ => {
                return Err(Error::Config {
                    line,
                    message: format!("unknown key {key:?}"),
                })
            }
        }
    }
    config.ridge = if absolute {
        Ridge::Absolute(ridge_value)
    } else {
        Ridge::Relative(ridge_value)
    };
    config.validate().map_err(|e| Error::Config {
        line: 0,
        message: e.to_string(),
    })?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

/// Every key with its effective value, in key order.
pub fn config_echo(config: &RunConfig) -> BTreeMap<String, String> {
    let (ridge, mode) = match config.ridge {
        Ridge::Relative(v) => (v, "relative"),
        Ridge::Absolute(v) => (v, "absolute"),
    };
    let pairs = [
        ("d_rff", config.rff.feature_dim.to_string()),
        ("sigma", config.rff.sigma.to_string()),
        ("convention", config.rff.convention.as_str().to_string()),
        ("rff_seed", config.rff.seed.to_string()),
        ("ridge", ridge.to_string()),
        ("ridge_mode", mode.to_string()),
        ("temperature", config.temperature.to_string()),
        ("threshold", config.threshold.to_string()),
        (
            "mean_mode",
            match config.mean_mode {
                MeanMode::Literal => "literal",
                MeanMode::Normalized => "normalized",
            }
            .to_string(),
        ),
        (
            "covariance_rule",
            match config.covariance_rule {
                CovarianceRule::Pooled => "pooled",
                CovarianceRule::Recursive => "recursive",
            }
            .to_string(),
        ),
        ("augment", config.augment.to_string()),
        ("noise_scale", config.noise_scale.to_string()),
        ("augment_seed", config.augment_seed.to_string()),
        ("batch_size", config.batch_size.to_string()),
        ("fused_inference", config.fused_inference.to_string()),
    ];
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Config file text that parses back to `config`.
pub fn to_config_text(config: &RunConfig) -> String {
    config_echo(config)
        .into_iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
}
