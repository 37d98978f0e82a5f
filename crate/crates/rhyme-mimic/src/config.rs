//! Run configuration file (TOML). Command-line flags override it; it
//! overrides built-in defaults.
//!
//! ```toml
//! model = "fixtures/model.json"
//! script = "fixtures/rhyme_script.json"
//! bus_addr = "127.0.0.1:7001"
//! clock = "real"
//!
//! [latency]
//! display_ms = 200
//! tts_ms = 1500
//! ```

use std::path::{Path, PathBuf};

use rhyme_mimic_core::gmm::CovarianceKind;
use serde::{Deserialize, Serialize};

use crate::clock::ClockMode;
use crate::nodes::LatencyModel;

pub const CONFIG_ENV: &str = "RHYME_MIMIC_CONFIG";
pub const DEFAULT_BUS_ADDR: &str = "127.0.0.1:7001";
pub const DEFAULT_WS_ADDR: &str = "127.0.0.1:7002";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<PathBuf>,
    pub script: Option<PathBuf>,
    pub stream: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub bus_addr: Option<String>,
    pub ws_addr: Option<String>,
    pub threshold: Option<f64>,
    pub rejection_log_density: Option<f64>,
    pub seed: Option<u64>,
    pub clock: Option<ClockMode>,
    pub rate: Option<f64>,
    pub split: Option<f64>,
    pub components: Option<usize>,
    pub covariance: Option<CovarianceKind>,
    pub state_interval_ms: Option<u64>,
    pub latency: LatencyModel,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::from_toml(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })
    }

    /// Loads `explicit`, else the file named by `RHYME_MIMIC_CONFIG`, else
    /// returns the defaults.
    pub fn discover(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        match explicit {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }
}
