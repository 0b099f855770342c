//! Optional TOML defaults. Command-line flags always win.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub sigma_mult: Option<f64>,
    pub truncate: Option<bool>,
    pub mode: Option<String>,
    pub var: Option<f64>,
    pub no_timestamp: Option<bool>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Config> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_known_keys_and_rejects_unknown() {
        let c: Config = toml::from_str("seed = 7\nsamples = 100\nmode = \"noisy\"").unwrap();
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.samples, Some(100));
        assert_eq!(c.mode.as_deref(), Some("noisy"));
        assert!(toml::from_str::<Config>("bogus = 1").is_err());
    }
}
