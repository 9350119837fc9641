//! Configuration, sweeps over `N`, gap-trend fitting and the command line.

pub mod cli;
pub mod config;
pub mod sweep;
pub mod trend;

pub use config::{BetaChoice, Config, ConfigError, Method};
pub use sweep::{read_csv, run_sweep, write_csv, SweepError, SweepPlan, SweepRow, Timings};
pub use trend::{fit_gap_trend, GapTrend, TrendError, Verdict};
