//! TOML problem/sweep documents.
//!
//! ```toml
//! couplings = [0.01, -0.004]   # J̄₁, J̄₂, ...
//! n_sites = 64                 # ignored by `sweep`, which uses n_ladder
//! mu = 0.1
//! variant = "weighted"         # or "printed"
//! beta = "asymptotic"          # or "unit"; optional
//! n_ladder = [8, 16, 32, 64, 128, 256]              # optional
//! methods = ["EXACT", "CONTOUR", "SADDLE", "LARGEST_TERM"]  # optional
//! precision = "extended:128"   # "fast" | "extended" | "extended:BITS"; optional
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BetaHook, EntropyVariant, ModelError, Problem};
use crate::series::{PrecisionMode, SeriesError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Precision(#[from] SeriesError),
    #[error("unknown beta hook {0:?} (expected \"asymptotic\" or \"unit\")")]
    Beta(String),
    #[error("unknown method {0:?}")]
    Method(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Exact,
    Contour,
    Saddle,
    LargestTerm,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Exact, Method::Contour, Method::Saddle, Method::LargestTerm];

    pub fn name(self) -> &'static str {
        match self {
            Method::Exact => "EXACT",
            Method::Contour => "CONTOUR",
            Method::Saddle => "SADDLE",
            Method::LargestTerm => "LARGEST_TERM",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_uppercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| ConfigError::Method(s.to_string()))
    }
}

impl TryFrom<String> for Method {
    type Error = ConfigError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> Self {
        m.name().to_string()
    }
}

/// Closed-form β hooks expressible in a config document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaChoice {
    #[default]
    Asymptotic,
    Unit,
}

impl FromStr for BetaChoice {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "asymptotic" => Ok(BetaChoice::Asymptotic),
            "unit" => Ok(BetaChoice::Unit),
            _ => Err(ConfigError::Beta(s.to_string())),
        }
    }
}

impl From<BetaChoice> for BetaHook {
    fn from(b: BetaChoice) -> Self {
        match b {
            BetaChoice::Asymptotic => BetaHook::Asymptotic,
            BetaChoice::Unit => BetaHook::Unit,
        }
    }
}

pub fn default_ladder() -> Vec<u64> {
    vec![8, 16, 32, 64, 128, 256]
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub couplings: Vec<f64>,
    pub n_sites: u64,
    pub mu: f64,
    #[serde(default)]
    pub variant: EntropyVariant,
    #[serde(default)]
    pub beta: BetaChoice,
    #[serde(default = "default_ladder")]
    pub n_ladder: Vec<u64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_precision")]
    pub precision: String,
}

fn default_precision() -> String {
    PrecisionMode::default().to_string()
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text)?;
        config.precision_mode()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Canonical document with every field spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config fields are always representable")
    }

    pub fn precision_mode(&self) -> Result<PrecisionMode, ConfigError> {
        Ok(self.precision.parse()?)
    }

    pub fn problem(&self) -> Result<Problem<f64>, ConfigError> {
        Ok(Problem::new(self.couplings.clone(), self.n_sites, self.mu)?
            .with_variant(self.variant)
            .with_beta(self.beta.into()))
    }
}
