//! Critic fitting, model comparison, goodness-of-fit testing, sampler-free
//! LSD training and the ICA baselines it is measured against.

mod adam;
mod config;
mod critic;
mod ica;
mod report;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use config::{BatchSampler, SplitData, TrainConfig};
pub use critic::{
    compare_models, fit_critic_lsd, fit_critic_lsd_with, fit_critic_power, gof_test, gof_test_from_terms,
    normal_threshold, CriticFit, GofResult, RankedModel, Selection, ValRecord, MIN_GOF_SAMPLES,
};
pub use ica::{train_ica_ml, train_ica_sm, IcaFit, IcaRecord};
pub use report::{hash_bytes, metrics_csv, write_metrics, RunManifest, METRICS_HEADER};
pub use train::{train_lsd, train_lsd_with, LsdOptions, LsdStep, LsdTraining};
