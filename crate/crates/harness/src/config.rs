//! Experiment configuration: one TOML file per run.
//!
//! Every field has a default, so an empty file is a valid `gauss_oracle`
//! config. CLI `--override key=value` edits the parsed TOML tree with dotted
//! keys (`train.iterations=200`) before it is deserialized.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use steinlearn::procedures::TrainConfig;
use steinlearn::samplers::{RbmSampling, SgldConfig};

use crate::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Critic fit against the closed-form Gaussian optimum.
    #[default]
    GaussOracle,
    /// Rejection rate of the learned goodness-of-fit test on perturbed RBMs.
    RbmGof,
    /// LSD and kernel discrepancies along an RBM perturbation ladder.
    RbmEval,
    /// ICA trained by maximum likelihood, score matching and LSD.
    IcaBench,
    /// Deep EBMs on two-dimensional toy densities.
    Toy2dTrain,
    /// Deep EBM on IDX images, followed by SGLD samples.
    EbmImageTrain,
    /// Null-distribution statistics of the goodness-of-fit test.
    Calibration,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::GaussOracle => "gauss_oracle",
            ExperimentKind::RbmGof => "rbm_gof",
            ExperimentKind::RbmEval => "rbm_eval",
            ExperimentKind::IcaBench => "ica_bench",
            ExperimentKind::Toy2dTrain => "toy2d_train",
            ExperimentKind::EbmImageTrain => "ebm_image_train",
            ExperimentKind::Calibration => "calibration",
        }
    }
}

/// Gaussian pair `p = N(0, I)` vs `q = N(shift·𝟙, I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussSettings {
    pub shift: f64,
}

impl Default for GaussSettings {
    fn default() -> Self {
        GaussSettings { shift: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RbmSettings {
    pub hidden: usize,
    pub sampling: RbmSampling,
    /// Significance level of the goodness-of-fit test.
    pub alpha: f64,
    /// Rows used to fit kernel bandwidths; the rest evaluate the KSD.
    pub kernel_fit_rows: usize,
    pub kernel_steps: usize,
    pub kernel_lr: f64,
}

impl Default for RbmSettings {
    fn default() -> Self {
        RbmSettings {
            hidden: 10,
            sampling: RbmSampling::Auto,
            alpha: 0.05,
            kernel_fit_rows: 200,
            kernel_steps: 50,
            kernel_lr: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcaSettings {
    /// Training methods to run: any of `ml`, `sm`, `lsd`.
    pub methods: Vec<String>,
    /// Learning rates swept per method; the best by validation log-likelihood
    /// is kept. LSD uses the same rate for critic and model.
    pub learning_rates: Vec<f64>,
    /// Scale mixing matrices by `1/√(2D)` so the data has unit variance per coordinate.
    pub unit_variance: bool,
    /// Width of the kernel standing in for `δ(z)` in the LSD model gradient.
    /// `None` uses the plain pointwise gradient.
    pub kink_bandwidth: Option<f64>,
}

impl Default for IcaSettings {
    fn default() -> Self {
        IcaSettings {
            methods: vec!["ml".into(), "sm".into(), "lsd".into()],
            learning_rates: vec![1e-3, 1e-4, 1e-5],
            unit_variance: true,
            kink_bandwidth: Some(0.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EbmSettings {
    /// Toy dataset names (`two_moons`, `rings`, `checkerboard`, `spirals`).
    pub datasets: Vec<String>,
    pub energy_hidden: Vec<usize>,
    /// IDX image file, resolved against the data directory when relative.
    /// `None` or `"synthetic"` selects generated stand-in digits.
    pub images: Option<PathBuf>,
    /// Use at most this many images.
    pub max_images: usize,
    /// Iterations of the post-training critic used to score the fit.
    pub eval_iterations: usize,
    pub sgld: SgldConfig,
    pub sgld_samples: usize,
}

impl Default for EbmSettings {
    fn default() -> Self {
        EbmSettings {
            datasets: vec!["two_moons".into()],
            energy_hidden: vec![300, 300],
            images: None,
            max_images: 10_000,
            eval_iterations: 1000,
            sgld: SgldConfig::default(),
            sgld_samples: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub name: Option<String>,
    pub out_dir: PathBuf,
    /// Base seeds; each expands into `repeats` derived runs.
    pub seeds: Vec<u64>,
    pub repeats: usize,
    /// Data dimensions to sweep.
    pub dims: Vec<usize>,
    /// Perturbation sizes (RBM experiments).
    pub grid: Vec<f64>,
    /// Samples drawn per run before splitting.
    pub samples: usize,
    pub split: [f64; 3],
    pub train: TrainConfig,
    pub gauss: GaussSettings,
    pub rbm: RbmSettings,
    pub ica: IcaSettings,
    pub ebm: EbmSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::GaussOracle,
            name: None,
            out_dir: PathBuf::from("runs"),
            seeds: vec![0],
            repeats: 1,
            dims: vec![100],
            grid: vec![0.0, 0.01, 0.02, 0.04, 0.06],
            samples: 10_000,
            split: [0.8, 0.1, 0.1],
            train: TrainConfig::default(),
            gauss: GaussSettings::default(),
            rbm: RbmSettings::default(),
            ica: IcaSettings::default(),
            ebm: EbmSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Parses `text`, applies `key=value` overrides, then deserializes.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text)?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Ok(toml::Value::Table(table).try_into()?)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    /// Default configuration for an experiment kind, tuned to the published setup.
    pub fn preset(kind: ExperimentKind) -> Self {
        let base = ExperimentConfig {
            kind,
            out_dir: PathBuf::from("runs").join(kind.as_str()),
            ..ExperimentConfig::default()
        };
        match kind {
            ExperimentKind::GaussOracle => base,
            ExperimentKind::RbmGof | ExperimentKind::Calibration => ExperimentConfig {
                dims: vec![50],
                samples: 1000,
                repeats: 200,
                grid: if kind == ExperimentKind::Calibration { vec![0.0] } else { base.grid.clone() },
                train: TrainConfig {
                    val_every: 100,
                    dropout: 0.1,
                    weight_decay: 5e-4,
                    ..TrainConfig::default()
                },
                ..base
            },
            ExperimentKind::RbmEval => ExperimentConfig {
                dims: vec![50],
                samples: 1000,
                seeds: (0..5).collect(),
                train: TrainConfig {
                    val_every: 50,
                    ..TrainConfig::default()
                },
                ..base
            },
            ExperimentKind::IcaBench => ExperimentConfig {
                dims: vec![10, 20],
                seeds: (0..5).collect(),
                train: TrainConfig {
                    lambda: 1.0,
                    critic_steps: 1,
                    iterations: 100_000,
                    val_every: 1000,
                    ..TrainConfig::default()
                },
                ..base
            },
            ExperimentKind::Toy2dTrain => ExperimentConfig {
                dims: vec![2],
                seeds: (0..3).collect(),
                train: TrainConfig {
                    lambda: 0.5,
                    critic_steps: 5,
                    iterations: 10_000,
                    val_every: 1000,
                    ..TrainConfig::default()
                },
                ..base
            },
            ExperimentKind::EbmImageTrain => ExperimentConfig {
                dims: vec![784],
                train: TrainConfig {
                    lambda: 10.0,
                    critic_steps: 5,
                    critic_lr: 1e-4,
                    model_lr: 1e-4,
                    critic_hidden: vec![1000, 1000],
                    val_every: 1000,
                    ..TrainConfig::default()
                },
                ebm: EbmSettings {
                    energy_hidden: vec![1000, 1000],
                    images: Some(PathBuf::from("train-images-idx3-ubyte")),
                    ..EbmSettings::default()
                },
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(HarnessError::Config(m));
        if self.seeds.is_empty() {
            return fail("seed list is empty".into());
        }
        if self.repeats == 0 {
            return fail("repeats must be >= 1".into());
        }
        if self.dims.is_empty() || self.dims.contains(&0) {
            return fail("dims must be a nonempty list of positive sizes".into());
        }
        if self.grid.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
            return fail(format!("perturbation grid values must be >= 0, got {:?}", self.grid));
        }
        if self.split.iter().any(|r| !(*r > 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return fail(format!("split ratios must be positive and sum to 1, got {:?}", self.split));
        }
        if !(self.rbm.alpha > 0.0 && self.rbm.alpha < 1.0) {
            return fail(format!("alpha must be in (0, 1), got {}", self.rbm.alpha));
        }
        for m in &self.ica.methods {
            if !["ml", "sm", "lsd"].contains(&m.as_str()) {
                return fail(format!("unknown ICA method `{m}`"));
            }
        }
        if self.ica.kink_bandwidth.is_some_and(|h| !(h > 0.0 && h.is_finite())) {
            return fail("ICA kink bandwidth must be > 0".into());
        }
        if self.ica.learning_rates.is_empty() || self.ica.learning_rates.iter().any(|l| !(*l > 0.0)) {
            return fail("ICA learning rates must be a nonempty list of positive values".into());
        }
        self.ebm.sgld.validate().map_err(HarnessError::from)?;
        Ok(())
    }

    /// `(base seed, repeat index, run seed)` for every run.
    pub fn run_seeds(&self) -> Vec<(u64, usize, u64)> {
        self.seeds
            .iter()
            .flat_map(|&s| {
                (0..self.repeats).map(move |r| {
                    let run = if self.repeats == 1 { s } else { steinlearn::rng::derive_seed(s, r as u64) };
                    (s, r, run)
                })
            })
            .collect()
    }
}

/// Value of `ebm.images` that selects generated stand-in digits.
pub const SYNTHETIC_IMAGES: &str = "synthetic";

/// Sets `a.b.c = value` in a TOML table. The value is parsed as TOML
/// (`3`, `0.5`, `true`, `[1, 2]`, `"text"`) and falls back to a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| HarnessError::Config(format!("override `{spec}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(HarnessError::Config(format!("bad override key `{key}`")));
    }
    let value = parse_value(raw.trim());
    let (last, parents) = path.split_last().expect("nonempty");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_every_preset() {
        for kind in [
            ExperimentKind::GaussOracle,
            ExperimentKind::RbmGof,
            ExperimentKind::RbmEval,
            ExperimentKind::IcaBench,
            ExperimentKind::Toy2dTrain,
            ExperimentKind::EbmImageTrain,
            ExperimentKind::Calibration,
        ] {
            let cfg = ExperimentConfig::preset(kind);
            cfg.validate().unwrap();
            let text = cfg.to_toml().unwrap();
            assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg, "{text}");
        }
    }

    #[test]
    fn empty_file_is_default_and_overrides_apply() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
        let cfg = ExperimentConfig::from_toml_with_overrides(
            "kind = \"rbm_gof\"\n[train]\niterations = 5\n",
            &[
                "train.iterations=200".into(),
                "train.critic_hidden=[32, 32]".into(),
                "rbm.alpha=0.01".into(),
                "out_dir=/tmp/x".into(),
                "seeds=[1,2]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.kind, ExperimentKind::RbmGof);
        assert_eq!(cfg.train.iterations, 200);
        assert_eq!(cfg.train.critic_hidden, vec![32, 32]);
        assert_eq!(cfg.rbm.alpha, 0.01);
        assert_eq!(cfg.out_dir, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.seeds, vec![1, 2]);
        assert!(ExperimentConfig::from_toml_with_overrides("", &["nokey".into()]).is_err());
        assert!(ExperimentConfig::from_toml_with_overrides("", &["train.bogus=1".into()]).is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let ok = ExperimentConfig::default();
        assert!(ExperimentConfig { seeds: vec![], ..ok.clone() }.validate().is_err());
        assert!(ExperimentConfig { grid: vec![-0.1], ..ok.clone() }.validate().is_err());
        assert!(ExperimentConfig { split: [0.5, 0.5, 0.5], ..ok.clone() }.validate().is_err());
        let runs = ExperimentConfig { seeds: vec![3], repeats: 4, ..ok }.run_seeds();
        assert_eq!(runs.len(), 4);
        assert!(runs.windows(2).all(|w| w[0].2 != w[1].2));
    }
}
