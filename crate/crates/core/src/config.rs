//! The single configuration file read by every CLI subcommand.
//!
//! ```toml
//! [engine]
//! max_level_concurrency = 200
//! noise_filter_window = 5
//!
//! [sim]
//! profile = "retail"
//! seed = 7
//!
//! [serve]
//! listen = "127.0.0.1:7400"
//! ```
//!
//! Every key is optional. `POI_LOG_DIR` overrides `serve.log_dir`.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::inference::ProfileKind;
use crate::runtime::EngineConfig;
use crate::sim::SimConfig;

pub const LOG_DIR_ENV: &str = "POI_LOG_DIR";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSection {
    pub max_level_concurrency: usize,
    pub noise_filter_window: usize,
    pub gptwc_timeout_ms: u64,
    pub profile: ProfileKind,
    /// How long a storage keeps an after-window request open in live mode.
    pub after_wait_ms: Option<u64>,
    pub watchdog_s: u64,
}

impl Default for EngineSection {
    fn default() -> Self {
        let e = EngineConfig::default();
        Self {
            max_level_concurrency: e.max_level_concurrency,
            noise_filter_window: e.noise_filter_window,
            gptwc_timeout_ms: e.gptwc_timeout.as_millis() as u64,
            profile: e.profile,
            after_wait_ms: e.after_wait.map(|d| d.as_millis() as u64),
            watchdog_s: e.watchdog.as_secs(),
        }
    }
}

impl EngineSection {
    pub fn to_engine(&self) -> EngineConfig {
        EngineConfig {
            max_level_concurrency: self.max_level_concurrency,
            noise_filter_window: self.noise_filter_window,
            gptwc_timeout: Duration::from_millis(self.gptwc_timeout_ms),
            profile: self.profile,
            after_wait: self.after_wait_ms.map(Duration::from_millis),
            dispatch_interval: None,
            watchdog: Duration::from_secs(self.watchdog_s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub listen: String,
    /// Directory holding the event log and run outputs.
    pub log_dir: PathBuf,
    /// How long live records are held to repair cross-client interleaving.
    pub reorder_delay_ms: u64,
    pub fsync: bool,
}

impl Default for ServeSection {
    fn default() -> Self {
        Self { listen: "127.0.0.1:7400".into(), log_dir: PathBuf::from("poi-run"), reorder_delay_ms: 20, fsync: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub engine: EngineSection,
    pub sim: SimConfig,
    pub serve: ServeSection,
}

impl Config {
    /// Parses a config file. Simulator keys default to the preset of the
    /// chosen `sim.profile`, so a retail section only lists what differs.
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let err = |source| ConfigError::Parse { path: path.to_owned(), source };
        let mut table: toml::Table = toml::from_str(text).map_err(err)?;
        if let Some(toml::Value::Table(sim)) = table.get_mut("sim") {
            let profile: ProfileKind = match sim.get("profile") {
                Some(v) => v.clone().try_into().map_err(err)?,
                None => ProfileKind::Airport,
            };
            let preset = toml::Table::try_from(SimConfig::for_profile(profile)).expect("preset serializes");
            for (k, v) in preset {
                sim.entry(k).or_insert(v);
            }
        }
        toml::Value::Table(table).try_into().map_err(err)
    }

    /// Loads `path`, or the defaults when no path is given, then applies the
    /// environment override.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.to_owned(), source })?;
                Self::parse(&text, p)?
            }
            None => Self::default(),
        };
        if let Some(dir) = std::env::var_os(LOG_DIR_ENV) {
            cfg.serve.log_dir = PathBuf::from(dir);
        }
        Ok(cfg)
    }

    /// The engine settings used for a simulated run: profile, cap and window
    /// follow the simulator so the engine sees the world it was built for.
    pub fn sim_engine(&self) -> EngineConfig {
        EngineConfig {
            profile: self.sim.profile,
            max_level_concurrency: self.sim.max_level_concurrency,
            noise_filter_window: self.sim.noise_filter_window,
            ..self.engine.to_engine()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.engine.max_level_concurrency == 0 {
            return Err(ConfigError::Invalid("engine.max_level_concurrency must be at least 1".into()));
        }
        if self.engine.noise_filter_window == 0 {
            return Err(ConfigError::Invalid("engine.noise_filter_window must be at least 1".into()));
        }
        self.sim.validate().map_err(|e| ConfigError::Invalid(e.0))
    }
}
