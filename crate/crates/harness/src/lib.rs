//! Experiment harness for `steinlearn`: configs, datasets, calibration
//! reports and the runners behind the `steinlab` CLI.
//!
//! Each runner writes `manifest.json`, `metrics.csv` and `summary.csv` (plus
//! serialized models) into the configured output directory. All outputs are a
//! pure function of the config, so reruns give identical bytes.

// `!(x > 0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod config;
pub mod data;
pub mod experiments;

use std::path::PathBuf;

pub use calibration::{calibration_report, QqReport};
pub use config::{ExperimentConfig, ExperimentKind};
pub use experiments::{run_experiment, RunOutcome};

/// Environment variable naming the directory relative data paths resolve against.
pub const DATA_DIR_ENV: &str = "STEINLAB_DATA_DIR";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),

    #[error("pixel value {value} at index {index} is outside [0, 255]")]
    PixelRange { value: i64, index: usize },

    #[error("need at least {needed} statistics, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error(transparent)]
    Core(#[from] steinlearn::Error),

    #[error(transparent)]
    TomlParse(#[from] toml::de::Error),

    #[error(transparent)]
    TomlWrite(#[from] toml::ser::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
