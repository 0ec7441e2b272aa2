//! Configuration files: flat `key = value` lines in TOML syntax.
//!
//! Keys are [`EmConfig`] field names; the short names `M`, `t1`, `t2`,
//! `d_u`, `d_l` and `r_m` are accepted as aliases. Missing keys keep their
//! defaults and unknown keys are rejected.

use std::path::Path;

use crate::em::EmConfig;
use crate::error::{Error, Result};

pub fn parse_config(text: &str) -> Result<EmConfig> {
    let cfg: EmConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<EmConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Renders a configuration in the same format [`parse_config`] reads.
pub fn to_config_text(cfg: &EmConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))
}
