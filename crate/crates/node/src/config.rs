//! Owner configuration, read from TOML.
//!
//! ```toml
//! db = "owner1.ndjson"
//! index = "owner1.ftmi"
//! listen = "127.0.0.1:7401"   # FTM_LISTEN overrides
//! tau = 50.0
//! alpha = 0.5
//! backend = "simulated-ideal"
//!
//! [grid]
//! origin = [500000.0, 4400000.0]
//! # either a cell side ...
//! cell_side = 690.19
//! # ... or the privacy parameters it is derived from
//! # epsilon = 0.01
//! # delta = 1e-5
//! # p0 = 0.81
//!
//! [cost]
//! bytes_per_comparison = 16
//! # seal_key = "<64 hex digits>"
//! ```

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use ftm_core::geometry::Coord;
use ftm_core::grid::GridSpec;
use ftm_core::partition::PartitionParams;
use ftm_core::privacy::{solve_noise_bound, PrivacyParams};
use ftm_core::verify::{CostModel, DEFAULT_SEAL_KEY};
use serde::Deserialize;
use thiserror::Error;

pub const LISTEN_ENV: &str = "FTM_LISTEN";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    db: PathBuf,
    index: Option<PathBuf>,
    listen: Option<String>,
    tau: f64,
    #[serde(default = "default_alpha")]
    alpha: f64,
    #[serde(default = "default_backend")]
    backend: String,
    /// Reference latitude for lon/lat input; absent means planar meters.
    ref_lat: Option<f64>,
    grid: RawGrid,
    #[serde(default)]
    cost: RawCost,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    origin: [f64; 2],
    cell_side: Option<f64>,
    epsilon: Option<f64>,
    delta: Option<f64>,
    p0: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCost {
    bytes_per_comparison: Option<u32>,
    seal_key: Option<String>,
}

fn default_alpha() -> f64 {
    0.5
}

fn default_backend() -> String {
    "simulated-ideal".into()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OwnerConfig {
    pub db: PathBuf,
    pub index: Option<PathBuf>,
    pub listen: SocketAddr,
    pub spec: GridSpec,
    pub tau: f64,
    pub partition: PartitionParams,
    pub backend: String,
    pub cost: CostModel,
    pub seal_key: [u8; 32],
    pub ref_lat: Option<f64>,
}

pub fn parse_seal_key(hex: &str) -> Result<[u8; 32], ConfigError> {
    let hex = hex.trim();
    if hex.len() != 64 || !hex.is_ascii() {
        return Err(ConfigError::Invalid("seal_key must be 64 hex digits".into()));
    }
    let mut key = [0u8; 32];
    for (i, k) in key.iter_mut().enumerate() {
        *k = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16)
            .map_err(|_| ConfigError::Invalid("seal_key must be 64 hex digits".into()))?;
    }
    Ok(key)
}

impl OwnerConfig {
    /// Parses `text`; relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ConfigError> {
        Self::from_toml_env(text, base, std::env::var(LISTEN_ENV).ok())
    }

    pub fn from_toml_env(text: &str, base: &Path, listen_override: Option<String>) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        if !(raw.tau > 0.0 && raw.tau.is_finite()) {
            return Err(ConfigError::Invalid(format!("tau must be positive, got {}", raw.tau)));
        }
        let cell_side = match (raw.grid.cell_side, raw.grid.epsilon, raw.grid.delta, raw.grid.p0) {
            (Some(l), None, None, None) => l,
            (None, Some(e), Some(d), Some(p0)) => {
                // rho does not affect the cell side
                let params = PrivacyParams::new(e, d, 1.0, p0).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                solve_noise_bound(&params)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?
                    .cell_side
            }
            _ => {
                return Err(ConfigError::Invalid(
                    "[grid] needs either cell_side or all of epsilon, delta, p0".into(),
                ))
            }
        };
        if !(cell_side > 0.0 && cell_side.is_finite()) {
            return Err(ConfigError::Invalid(format!("cell side must be positive, got {cell_side}")));
        }
        let listen = listen_override
            .or(raw.listen)
            .unwrap_or_else(|| "127.0.0.1:7401".into());
        let listen = listen
            .parse()
            .map_err(|_| ConfigError::Invalid(format!("bad listen address {listen:?}")))?;
        let partition = PartitionParams::new(raw.alpha).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let seal_key = match &raw.cost.seal_key {
            Some(k) => parse_seal_key(k)?,
            None => DEFAULT_SEAL_KEY,
        };
        let mut cost = CostModel::default();
        if let Some(b) = raw.cost.bytes_per_comparison {
            cost.bytes_per_comparison = b;
        }
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        Ok(Self {
            db: resolve(raw.db),
            index: raw.index.map(resolve),
            listen,
            spec: GridSpec::new(Coord::new(raw.grid.origin[0], raw.grid.origin[1]), cell_side),
            tau: raw.tau,
            partition,
            backend: raw.backend,
            cost,
            seal_key,
            ref_lat: raw.ref_lat,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }
}
