//! Experiment runners. Each `*_run` function performs one seeded run and
//! returns typed results; [`run_experiment`] sweeps a config over dims, grid
//! points and seeds and writes the CSV artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use steinlearn::discrepancy::{
    gaussian_sd_oracle, ksd_quadratic, lsd_estimate, regularizer, stein_terms_exact, Critic, DiscrepancyEstimate,
    KsdObjective, OptimalGaussianCritic, RbfKernel,
};
use steinlearn::procedures::{
    fit_critic_lsd, fit_critic_power, gof_test, hash_bytes, train_ica_ml, train_ica_sm, train_lsd_with, GofResult,
    LsdOptions, SplitData, TrainConfig, ValRecord,
};
use steinlearn::rng::{derive_seed, normal_matrix, rng_from_seed};
use steinlearn::samplers::{gbrbm_sample, ica_sample, matrix_to_bytes, sgld_sample, SampleManifest, SgldInit};
use steinlearn::scorezoo::{
    DeepEbmModel, GaussianModel, GbrbmModel, IcaModel, KinkSmoothedIca, LogDensity, ScoreModel,
};
use steinlearn::MlpNet64;

use crate::calibration::{calibration_report, QqReport};
use crate::config::{ExperimentConfig, ExperimentKind, SYNTHETIC_IMAGES};
use crate::data::{logit_dequantize, resolve_data_path, split, synthetic_images, load_idx, Toy2d};
use crate::{HarnessError, Result};

// Seed streams derived from each run seed.
const STREAM_MODEL: u64 = 10;
const STREAM_SAMPLE: u64 = 11;
const STREAM_PERTURB: u64 = 12;
const STREAM_SPLIT: u64 = 13;
const STREAM_CRITIC: u64 = 14;
const STREAM_INIT: u64 = 15;
const STREAM_EVAL: u64 = 16;
const STREAM_SGLD: u64 = 17;

fn with_seed(train: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..train.clone()
    }
}

fn split_of(cfg: &ExperimentConfig, x: &Array2<f64>, seed: u64) -> Result<SplitData<f64>> {
    split(x.view(), cfg.split, derive_seed(seed, STREAM_SPLIT))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussOracleRun {
    pub dim: usize,
    pub seed: u64,
    /// Exact-trace LSD of the fitted critic on the test split.
    pub lsd: DiscrepancyEstimate<f64>,
    pub penalty: f64,
    /// `lsd.mean − penalty`, comparable with `oracle`.
    pub regularized: f64,
    pub oracle: f64,
    /// Mean per-point cosine similarity between the critic and the optimal critic.
    pub cosine: f64,
    pub selected_iter: usize,
    pub history: Vec<ValRecord>,
}

/// Critic fit between `p = N(0, I)` (data) and `q = N(shift·𝟙, I)` (model).
pub fn gauss_oracle_run(cfg: &ExperimentConfig, d: usize, seed: u64) -> Result<(GaussOracleRun, MlpNet64)> {
    let p = GaussianModel::<f64>::standard(d);
    let q = GaussianModel::isotropic(Array1::from_elem(d, cfg.gauss.shift), 1.0)?;
    let x: Array2<f64> = normal_matrix(&mut rng_from_seed(derive_seed(seed, STREAM_SAMPLE)), cfg.samples, d);
    let data = split_of(cfg, &x, seed)?;
    let fit = fit_critic_lsd(&q, &data, &with_seed(&cfg.train, derive_seed(seed, STREAM_CRITIC)))?;
    let test = data.test.view();
    let lsd = lsd_estimate(&stein_terms_exact(&fit.critic, &q, test)?)?;
    let penalty = regularizer(&fit.critic, test, cfg.train.lambda)?;
    let optimal = OptimalGaussianCritic::new(&p, &q, cfg.train.lambda)?;
    let f = fit.critic.forward_batch(test)?;
    let f_star = optimal.eval_batch(test)?;
    let cosine = f
        .axis_iter(Axis(0))
        .zip(f_star.axis_iter(Axis(0)))
        .map(|(a, b)| a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt()).max(f64::MIN_POSITIVE))
        .sum::<f64>()
        / test.nrows() as f64;
    let run = GaussOracleRun {
        dim: d,
        seed,
        lsd,
        penalty,
        regularized: lsd.mean - penalty,
        oracle: gaussian_sd_oracle(&p, &q, cfg.train.lambda)?,
        cosine,
        selected_iter: fit.selected_iter,
        history: fit.history,
    };
    Ok((run, fit.critic))
}

/// Base RBM (the data source), its perturbed copy (the model) and a sample.
/// The grid value does not enter any seed, so a seed's perturbations are nested.
pub fn rbm_pair(cfg: &ExperimentConfig, d: usize, sigma: f64, seed: u64) -> Result<(GbrbmModel<f64>, GbrbmModel<f64>, Array2<f64>)> {
    let base = GbrbmModel::random(d, cfg.rbm.hidden, derive_seed(seed, STREAM_MODEL))?;
    let model = base.perturb(sigma, derive_seed(seed, STREAM_PERTURB))?;
    let x = gbrbm_sample(&base, cfg.samples, cfg.rbm.sampling, derive_seed(seed, STREAM_SAMPLE))?;
    Ok((base, model, x))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GofRun {
    pub dim: usize,
    pub sigma: f64,
    pub seed: u64,
    pub result: GofResult,
    pub selected_iter: usize,
}

pub fn rbm_gof_run(cfg: &ExperimentConfig, d: usize, sigma: f64, seed: u64) -> Result<GofRun> {
    let (_, model, x) = rbm_pair(cfg, d, sigma, seed)?;
    let data = split_of(cfg, &x, seed)?;
    let fit = fit_critic_power(&model, &data, &with_seed(&cfg.train, derive_seed(seed, STREAM_CRITIC)))?;
    let result = gof_test(&model, &fit.critic, data.test.view(), cfg.rbm.alpha)?;
    Ok(GofRun {
        dim: d,
        sigma,
        seed,
        result,
        selected_iter: fit.selected_iter,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalRun {
    pub dim: usize,
    pub sigma: f64,
    pub seed: u64,
    pub lsd: DiscrepancyEstimate<f64>,
    pub ksd: DiscrepancyEstimate<f64>,
    pub ksd_bandwidth: f64,
}

/// LSD (critic trained on the split) and quadratic KSD (bandwidth fit on
/// the first `kernel_fit_rows` samples, evaluated on the rest) of the
/// perturbed RBM against samples of the base RBM.
pub fn rbm_eval_run(cfg: &ExperimentConfig, d: usize, sigma: f64, seed: u64) -> Result<EvalRun> {
    let (_, model, x) = rbm_pair(cfg, d, sigma, seed)?;
    let data = split_of(cfg, &x, seed)?;
    let fit = fit_critic_lsd(&model, &data, &with_seed(&cfg.train, derive_seed(seed, STREAM_CRITIC)))?;
    let lsd = lsd_estimate(&stein_terms_exact(&fit.critic, &model, data.test.view())?)?;

    let k = cfg.rbm.kernel_fit_rows;
    if k < 2 || x.nrows() < k + 2 {
        return Err(HarnessError::Config(format!(
            "kernel_fit_rows = {k} leaves too few of {} samples for the KSD",
            x.nrows()
        )));
    }
    let (fit_rows, eval_rows) = (x.slice(s![..k, ..]), x.slice(s![k.., ..]));
    let mut kernel = RbfKernel::median_heuristic(fit_rows)?;
    let fit_scores = model.score_batch(fit_rows)?;
    kernel.fit(fit_scores.view(), fit_rows, KsdObjective::Mean, cfg.rbm.kernel_steps, cfg.rbm.kernel_lr)?;
    let ksd = ksd_quadratic(&model, eval_rows, &kernel)?;
    Ok(EvalRun {
        dim: d,
        sigma,
        seed,
        lsd,
        ksd,
        ksd_bandwidth: kernel.bandwidth(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IcaMethodRun {
    pub method: String,
    pub learning_rate: f64,
    pub val_log_likelihood: f64,
    pub test_log_likelihood: f64,
    pub selected_iter: usize,
    /// Set when the run failed; the likelihoods are then NaN.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IcaSeedRun {
    pub dim: usize,
    pub seed: u64,
    pub truth_test_log_likelihood: f64,
    /// Every (method, learning rate) run.
    pub runs: Vec<IcaMethodRun>,
    /// Per method, the run with the best validation log-likelihood.
    pub best: Vec<IcaMethodRun>,
}

fn ica_matrix(cfg: &ExperimentConfig, d: usize, seed: u64) -> Result<IcaModel<f64>> {
    let raw = IcaModel::<f64>::random(d, seed)?;
    if cfg.ica.unit_variance {
        Ok(IcaModel::new(raw.mixing() / (2.0 * d as f64).sqrt())?)
    } else {
        Ok(raw)
    }
}

fn ica_method(
    method: &str,
    init: &IcaModel<f64>,
    data: &SplitData<f64>,
    train: &TrainConfig,
    kink_bandwidth: Option<f64>,
) -> Result<(IcaModel<f64>, usize)> {
    let (x, val) = (data.train.view(), data.val.view());
    Ok(match method {
        "ml" => {
            let fit = train_ica_ml(init.clone(), x, val, train)?;
            (fit.model, fit.selected_iter)
        }
        "sm" => {
            let fit = train_ica_sm(init.clone(), x, val, train)?;
            (fit.model, fit.selected_iter)
        }
        "lsd" => {
            let val_ll = |m: &IcaModel<f64>| m.mean_log_density(val);
            match kink_bandwidth {
                Some(h) => {
                    let check = |m: &KinkSmoothedIca<f64>| val_ll(&m.model);
                    let out = train_lsd_with(
                        KinkSmoothedIca::new(init.clone(), h)?,
                        x,
                        train,
                        LsdOptions {
                            checkpoint: Some(&check),
                            ..LsdOptions::default()
                        },
                    )?;
                    (out.model.model, out.selected_iter.unwrap_or(0))
                }
                None => {
                    let out = train_lsd_with(
                        init.clone(),
                        x,
                        train,
                        LsdOptions {
                            checkpoint: Some(&val_ll),
                            ..LsdOptions::default()
                        },
                    )?;
                    (out.model, out.selected_iter.unwrap_or(0))
                }
            }
        }
        other => return Err(HarnessError::Config(format!("unknown ICA method `{other}`"))),
    })
}

/// Trains every configured method at every learning rate from one shared
/// initialization and reports test log-likelihoods. A failed run becomes a
/// NaN entry; it does not stop the other runs.
pub fn ica_run(cfg: &ExperimentConfig, d: usize, seed: u64) -> Result<IcaSeedRun> {
    let truth = ica_matrix(cfg, d, derive_seed(seed, STREAM_MODEL))?;
    let x = ica_sample(&truth, cfg.samples, derive_seed(seed, STREAM_SAMPLE))?;
    let data = split_of(cfg, &x, seed)?;
    let init = ica_matrix(cfg, d, derive_seed(seed, STREAM_INIT))?;
    let test = data.test.view();
    let mut runs = Vec::new();
    let mut best = Vec::new();
    for method in &cfg.ica.methods {
        let mut winner: Option<IcaMethodRun> = None;
        for &lr in &cfg.ica.learning_rates {
            let train = TrainConfig {
                seed: derive_seed(seed, STREAM_CRITIC),
                model_lr: lr,
                critic_lr: lr,
                ..cfg.train.clone()
            };
            let run = match ica_method(method, &init, &data, &train, cfg.ica.kink_bandwidth) {
                Ok((model, selected_iter)) => IcaMethodRun {
                    method: method.clone(),
                    learning_rate: lr,
                    val_log_likelihood: model.mean_log_density(data.val.view())?,
                    test_log_likelihood: model.mean_log_density(test)?,
                    selected_iter,
                    error: None,
                },
                Err(e) => IcaMethodRun {
                    method: method.clone(),
                    learning_rate: lr,
                    val_log_likelihood: f64::NAN,
                    test_log_likelihood: f64::NAN,
                    selected_iter: 0,
                    error: Some(e.to_string()),
                },
            };
            let replace = match &winner {
                None => true,
                Some(w) => {
                    run.val_log_likelihood > w.val_log_likelihood
                        || (run.val_log_likelihood.is_finite() && !w.val_log_likelihood.is_finite())
                }
            };
            if replace {
                winner = Some(run.clone());
            }
            runs.push(run);
        }
        best.extend(winner);
    }
    Ok(IcaSeedRun {
        dim: d,
        seed,
        truth_test_log_likelihood: truth.mean_log_density(test)?,
        runs,
        best,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyRun {
    pub dataset: String,
    pub seed: u64,
    /// Test LSD of a freshly fitted critic against the untrained model.
    pub initial_lsd: DiscrepancyEstimate<f64>,
    pub final_lsd: DiscrepancyEstimate<f64>,
}

impl ToyRun {
    pub fn ratio(&self) -> f64 {
        self.final_lsd.mean / self.initial_lsd.mean
    }
}

fn energy_model(cfg: &ExperimentConfig, d: usize, seed: u64) -> Result<DeepEbmModel<f64>> {
    let mut dims = vec![d];
    dims.extend(&cfg.ebm.energy_hidden);
    dims.push(1);
    Ok(DeepEbmModel::with_standard_envelope(MlpNet64::init(&dims, cfg.train.activation, seed)?)?)
}

/// Held-out LSD of `model` with a critic fitted from scratch.
pub fn fresh_critic_lsd<M: ScoreModel<f64>>(
    cfg: &ExperimentConfig,
    model: &M,
    data: &SplitData<f64>,
    seed: u64,
) -> Result<DiscrepancyEstimate<f64>> {
    let eval = TrainConfig {
        iterations: cfg.ebm.eval_iterations,
        seed,
        ..cfg.train.clone()
    };
    let fit = fit_critic_lsd(model, data, &eval)?;
    Ok(lsd_estimate(&stein_terms_exact(&fit.critic, model, data.test.view())?)?)
}

pub fn toy2d_run(cfg: &ExperimentConfig, dataset: &str, seed: u64) -> Result<(ToyRun, DeepEbmModel<f64>)> {
    let kind = Toy2d::parse(dataset)?;
    let x = kind.sample(cfg.samples, derive_seed(seed, STREAM_SAMPLE));
    let data = split_of(cfg, &x, seed)?;
    let init = energy_model(cfg, 2, derive_seed(seed, STREAM_INIT))?;
    let eval_seed = derive_seed(seed, STREAM_EVAL);
    let initial_lsd = fresh_critic_lsd(cfg, &init, &data, eval_seed)?;
    let trained = train_lsd_with(
        init,
        data.train.view(),
        &with_seed(&cfg.train, derive_seed(seed, STREAM_CRITIC)),
        LsdOptions::default(),
    )?;
    let final_lsd = fresh_critic_lsd(cfg, &trained.model, &data, eval_seed)?;
    Ok((
        ToyRun {
            dataset: kind.name().to_string(),
            seed,
            initial_lsd,
            final_lsd,
        },
        trained.model,
    ))
}

#[derive(Debug, Clone)]
pub struct ImageRun {
    pub source: String,
    pub images: usize,
    pub iterations: usize,
    pub model: DeepEbmModel<f64>,
    pub samples: Array2<f64>,
    pub sample_manifest: SampleManifest,
}

/// Loads images (or generates stand-ins when no file is configured),
/// logit-dequantizes them, trains a deep EBM with LSD and draws SGLD samples.
pub fn ebm_image_run(cfg: &ExperimentConfig, seed: u64) -> Result<ImageRun> {
    let (idx, source) = match &cfg.ebm.images {
        Some(p) if p.as_os_str() != SYNTHETIC_IMAGES => {
            let path = resolve_data_path(p);
            (load_idx(&path)?, path.display().to_string())
        }
        _ => (
            synthetic_images(cfg.ebm.max_images, derive_seed(seed, STREAM_SAMPLE)),
            "synthetic".to_string(),
        ),
    };
    let pixels = idx.to_rows(cfg.ebm.max_images);
    let x = logit_dequantize(pixels.view(), derive_seed(seed, STREAM_PERTURB))?;
    let data = split_of(cfg, &x, seed)?;
    let init = energy_model(cfg, x.ncols(), derive_seed(seed, STREAM_INIT))?;
    let trained = train_lsd_with(
        init,
        data.train.view(),
        &with_seed(&cfg.train, derive_seed(seed, STREAM_CRITIC)),
        LsdOptions::default(),
    )?;
    let model = trained.model;
    let sgld_data = matches!(cfg.ebm.sgld.init, SgldInit::Data).then(|| data.train.view());
    let batch = sgld_sample(&model, &cfg.ebm.sgld, cfg.ebm.sgld_samples, derive_seed(seed, STREAM_SGLD), sgld_data)?;
    let sample_manifest = SampleManifest {
        model_hash: Some(model.to_container().hash()),
        sampler: serde_json::to_value(batch.config())?,
        seed: batch.seed(),
        rows: batch.samples().nrows(),
        cols: batch.samples().ncols(),
    };
    Ok(ImageRun {
        source,
        images: x.nrows(),
        iterations: trained.history.len(),
        model,
        samples: batch.into_samples(),
        sample_manifest,
    })
}

/// Per-seed goodness-of-fit runs; `None` marks a failed run.
pub type SeededRuns = Vec<(u64, Option<GofRun>)>;

/// Null-hypothesis statistics of the goodness-of-fit test (first grid value,
/// normally 0) and their normality report.
pub fn calibration_run(cfg: &ExperimentConfig, d: usize) -> Result<(SeededRuns, QqReport)> {
    let sigma = cfg.grid.first().copied().unwrap_or(0.0);
    let runs: SeededRuns = cfg
        .run_seeds()
        .into_iter()
        .map(|(_, _, s)| (s, rbm_gof_run(cfg, d, sigma, s).ok()))
        .collect();
    let stats: Vec<f64> = runs.iter().filter_map(|(_, r)| r.map(|r| r.result.t)).collect();
    let report = calibration_report(&stats)?;
    Ok((runs, report))
}

/// Plain CSV table; floats use shortest round-trip formatting.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Column values parsed as floats (NaN where unparsable).
    pub fn column(&self, name: &str) -> Vec<f64> {
        let Some(k) = self.header.iter().position(|h| h == name) else {
            return Vec::new();
        };
        self.rows.iter().map(|r| r[k].parse().unwrap_or(f64::NAN)).collect()
    }
}

macro_rules! row {
    ($($v:expr),* $(,)?) => { vec![$(format!("{}", $v)),*] };
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Everything a run produced, in memory.
#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub kind: Option<ExperimentKind>,
    pub metrics: Table,
    pub summary: Table,
    /// Extra files (path relative to the output directory, bytes).
    pub artifacts: BTreeMap<String, Vec<u8>>,
    /// Per-run failures, as `label: error`.
    pub failures: Vec<String>,
}

/// Run record written next to the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub kind: ExperimentKind,
    pub name: Option<String>,
    pub config: serde_json::Value,
    /// SHA-256 of every output file.
    pub files: BTreeMap<String, String>,
    pub failures: Vec<String>,
}

const MODELS_DIR: &str = "models";

fn history_rows(metrics: &mut Table, prefix: &[String], history: &[ValRecord]) {
    for r in history {
        let mut row = prefix.to_vec();
        row.extend(row![r.iter, r.train_objective, r.val_mean, r.val_std, r.score()]);
        metrics.push(row);
    }
}

fn run_gauss(cfg: &ExperimentConfig, out: &mut RunOutcome) {
    out.metrics = Table::new(&["dim", "seed", "iter", "train_objective", "val_mean", "val_std", "val_mean_minus_std"]);
    out.summary = Table::new(&[
        "dim", "seed", "lsd_mean", "lsd_se", "penalty", "regularized", "oracle", "ratio", "cosine", "selected_iter",
    ]);
    for &d in &cfg.dims {
        for (_, _, seed) in cfg.run_seeds() {
            match gauss_oracle_run(cfg, d, seed) {
                Ok((r, critic)) => {
                    history_rows(&mut out.metrics, &[d.to_string(), seed.to_string()], &r.history);
                    out.summary.push(row![
                        d,
                        seed,
                        r.lsd.mean,
                        r.lsd.standard_error(),
                        r.penalty,
                        r.regularized,
                        r.oracle,
                        r.regularized / r.oracle,
                        r.cosine,
                        r.selected_iter
                    ]);
                    out.artifacts
                        .insert(format!("{MODELS_DIR}/critic_d{d}_seed{seed}.stnl"), critic.to_bytes());
                }
                Err(e) => {
                    out.failures.push(format!("dim={d} seed={seed}: {e}"));
                    out.summary.push(row![d, seed, f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN, ""]);
                }
            }
        }
    }
}

fn run_gof(cfg: &ExperimentConfig, out: &mut RunOutcome) {
    out.metrics = Table::new(&["dim", "sigma", "seed", "t", "threshold", "reject", "selected_iter"]);
    out.summary = Table::new(&["dim", "sigma", "runs", "failures", "rejections", "rejection_rate"]);
    for &d in &cfg.dims {
        for &sigma in &cfg.grid {
            let (mut ok, mut failed, mut rejected) = (0usize, 0usize, 0usize);
            for (_, _, seed) in cfg.run_seeds() {
                match rbm_gof_run(cfg, d, sigma, seed) {
                    Ok(r) => {
                        ok += 1;
                        rejected += r.result.reject as usize;
                        out.metrics.push(row![
                            d,
                            sigma,
                            seed,
                            r.result.t,
                            r.result.threshold,
                            r.result.reject,
                            r.selected_iter
                        ]);
                    }
                    Err(e) => {
                        failed += 1;
                        out.failures.push(format!("dim={d} sigma={sigma} seed={seed}: {e}"));
                        out.metrics.push(row![d, sigma, seed, f64::NAN, f64::NAN, "", ""]);
                    }
                }
            }
            let rate = if ok > 0 { rejected as f64 / ok as f64 } else { f64::NAN };
            out.summary.push(row![d, sigma, ok + failed, failed, rejected, rate]);
        }
    }
}

fn run_eval(cfg: &ExperimentConfig, out: &mut RunOutcome) {
    out.metrics = Table::new(&[
        "dim", "sigma", "seed", "lsd_mean", "lsd_std", "lsd_n", "lsd_se", "ksd_mean", "ksd_std", "ksd_n", "ksd_se",
        "ksd_bandwidth",
    ]);
    // Two kinds of error bar: the per-run standard error σ/√n_test averaged
    // over seeds, and the spread of the per-seed means.
    out.summary = Table::new(&[
        "dim",
        "sigma",
        "seeds",
        "lsd_mean",
        "lsd_se_mean",
        "lsd_seed_std",
        "ksd_mean",
        "ksd_se_mean",
        "ksd_seed_std",
    ]);
    for &d in &cfg.dims {
        for &sigma in &cfg.grid {
            let mut runs = Vec::new();
            for (_, _, seed) in cfg.run_seeds() {
                match rbm_eval_run(cfg, d, sigma, seed) {
                    Ok(r) => {
                        out.metrics.push(row![
                            d,
                            sigma,
                            seed,
                            r.lsd.mean,
                            r.lsd.std,
                            r.lsd.n,
                            r.lsd.standard_error(),
                            r.ksd.mean,
                            r.ksd.std,
                            r.ksd.n,
                            r.ksd.standard_error(),
                            r.ksd_bandwidth
                        ]);
                        runs.push(r);
                    }
                    Err(e) => {
                        out.failures.push(format!("dim={d} sigma={sigma} seed={seed}: {e}"));
                        let nan = f64::NAN;
                        out.metrics.push(row![d, sigma, seed, nan, nan, "", nan, nan, nan, "", nan, nan]);
                    }
                }
            }
            let col = |f: &dyn Fn(&EvalRun) -> f64| runs.iter().map(f).collect::<Vec<f64>>();
            let (lsd_mean, lsd_seed_std) = mean_std(&col(&|r| r.lsd.mean));
            let (ksd_mean, ksd_seed_std) = mean_std(&col(&|r| r.ksd.mean));
            let (lsd_se, _) = mean_std(&col(&|r| r.lsd.standard_error()));
            let (ksd_se, _) = mean_std(&col(&|r| r.ksd.standard_error()));
            out.summary.push(row![
                d,
                sigma,
                runs.len(),
                lsd_mean,
                lsd_se,
                lsd_seed_std,
                ksd_mean,
                ksd_se,
                ksd_seed_std
            ]);
        }
    }
}

fn run_ica(cfg: &ExperimentConfig, out: &mut RunOutcome) {
    out.metrics = Table::new(&[
        "dim", "seed", "method", "learning_rate", "val_log_likelihood", "test_log_likelihood", "selected_iter", "error",
    ]);
    out.summary = Table::new(&["dim", "method", "seeds", "failures", "test_ll_mean", "test_ll_seed_std"]);
    for &d in &cfg.dims {
        let mut per_method: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (_, _, seed) in cfg.run_seeds() {
            match ica_run(cfg, d, seed) {
                Ok(r) => {
                    per_method.entry("truth".into()).or_default().push(r.truth_test_log_likelihood);
                    for m in &r.runs {
                        out.metrics.push(row![
                            d,
                            seed,
                            m.method,
                            m.learning_rate,
                            m.val_log_likelihood,
                            m.test_log_likelihood,
                            m.selected_iter,
                            m.error.clone().unwrap_or_default()
                        ]);
                        if let Some(e) = &m.error {
                            out.failures.push(format!("dim={d} seed={seed} {} lr={}: {e}", m.method, m.learning_rate));
                        }
                    }
                    for m in &r.best {
                        per_method.entry(m.method.clone()).or_default().push(m.test_log_likelihood);
                    }
                }
                Err(e) => {
                    out.failures.push(format!("dim={d} seed={seed}: {e}"));
                    for m in cfg.ica.methods.iter().map(String::as_str).chain(["truth"]) {
                        per_method.entry(m.to_string()).or_default().push(f64::NAN);
                    }
                }
            }
        }
        for (method, values) in &per_method {
            let ok: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
            let (mean, std) = if ok.len() == values.len() { mean_std(&ok) } else { (f64::NAN, f64::NAN) };
            out.summary.push(row![d, method, values.len(), values.len() - ok.len(), mean, std]);
        }
    }
}

fn run_toy(cfg: &ExperimentConfig, out: &mut RunOutcome) {
    out.metrics = Table::new(&[
        "dataset", "seed", "initial_lsd", "initial_se", "final_lsd", "final_se", "ratio",
    ]);
    out.summary = Table::new(&["dataset", "seeds", "failures", "ratio_mean", "ratio_max"]);
    for name in &cfg.ebm.datasets {
        let mut ratios = Vec::new();
        let mut failed = 0;
        for (_, _, seed) in cfg.run_seeds() {
            match toy2d_run(cfg, name, seed) {
                Ok((r, model)) => {
                    out.metrics.push(row![
                        r.dataset,
                        seed,
                        r.initial_lsd.mean,
                        r.initial_lsd.standard_error(),
                        r.final_lsd.mean,
                        r.final_lsd.standard_error(),
                        r.ratio()
                    ]);
                    ratios.push(r.ratio());
                    out.artifacts
                        .insert(format!("{MODELS_DIR}/{name}_seed{seed}.stnl"), model.to_container().to_bytes());
                }
                Err(e) => {
                    failed += 1;
                    out.failures.push(format!("dataset={name} seed={seed}: {e}"));
                    let nan = f64::NAN;
                    out.metrics.push(row![name, seed, nan, nan, nan, nan, nan]);
                }
            }
        }
        let (mean, _) = mean_std(&ratios);
        let max = ratios.iter().copied().fold(f64::NAN, f64::max);
        out.summary.push(row![name, ratios.len() + failed, failed, mean, max]);
    }
}

fn run_images(cfg: &ExperimentConfig, out: &mut RunOutcome) {
    out.metrics = Table::new(&["seed", "source", "images", "iterations", "samples_finite", "sample_mean", "sample_std"]);
    out.summary = Table::new(&["seeds", "failures", "all_finite"]);
    let mut failed = 0;
    let mut all_finite = true;
    let seeds = cfg.run_seeds();
    for &(_, _, seed) in &seeds {
        match ebm_image_run(cfg, seed) {
            Ok(r) => {
                let finite = r.samples.iter().all(|v| v.is_finite());
                all_finite &= finite;
                let (m, sd) = mean_std(r.samples.as_slice().unwrap_or(&[]));
                out.metrics.push(row![seed, r.source, r.images, r.iterations, finite, m, sd]);
                out.artifacts
                    .insert(format!("{MODELS_DIR}/ebm_seed{seed}.stnl"), r.model.to_container().to_bytes());
                out.artifacts
                    .insert(format!("samples_seed{seed}.stnm"), matrix_to_bytes(&r.samples));
                out.artifacts.insert(
                    format!("samples_seed{seed}.stnm.json"),
                    serde_json::to_vec_pretty(&r.sample_manifest).unwrap_or_default(),
                );
            }
            Err(e) => {
                failed += 1;
                all_finite = false;
                out.failures.push(format!("seed={seed}: {e}"));
                out.metrics.push(row![seed, "", "", "", false, f64::NAN, f64::NAN]);
            }
        }
    }
    out.summary.push(row![seeds.len(), failed, all_finite]);
}

fn run_calibration(cfg: &ExperimentConfig, out: &mut RunOutcome) -> Result<()> {
    out.metrics = Table::new(&["dim", "seed", "t"]);
    out.summary = Table::new(&[
        "dim", "statistics", "failures", "ks_distance", "ks_p_value", "max_central_deviation", "degenerate",
    ]);
    for &d in &cfg.dims {
        let (runs, report) = calibration_run(cfg, d)?;
        let mut failed = 0;
        for (seed, r) in &runs {
            match r {
                Some(r) => out.metrics.push(row![d, seed, r.result.t]),
                None => {
                    failed += 1;
                    out.failures.push(format!("dim={d} seed={seed}: run failed"));
                    out.metrics.push(row![d, seed, f64::NAN]);
                }
            }
        }
        out.summary.push(row![
            d,
            report.empirical.len(),
            failed,
            report.ks_distance,
            report.ks_p_value,
            report.max_central_deviation(0.9),
            report.degenerate
        ]);
        out.artifacts.insert(format!("qq_d{d}.csv"), report.to_csv().into_bytes());
    }
    Ok(())
}

/// Runs an experiment in memory without touching the file system.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut out = RunOutcome {
        kind: Some(cfg.kind),
        ..RunOutcome::default()
    };
    match cfg.kind {
        ExperimentKind::GaussOracle => run_gauss(cfg, &mut out),
        ExperimentKind::RbmGof => run_gof(cfg, &mut out),
        ExperimentKind::RbmEval => run_eval(cfg, &mut out),
        ExperimentKind::IcaBench => run_ica(cfg, &mut out),
        ExperimentKind::Toy2dTrain => run_toy(cfg, &mut out),
        ExperimentKind::EbmImageTrain => run_images(cfg, &mut out),
        ExperimentKind::Calibration => run_calibration(cfg, &mut out)?,
    }
    Ok(out)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

/// Validates, runs and writes `metrics.csv`, `summary.csv`, extra artifacts
/// and `manifest.json` (with hashes of the others) under `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let out = execute(cfg)?;
    let mut files = BTreeMap::new();
    let metrics = out.metrics.to_bytes()?;
    let summary = out.summary.to_bytes()?;
    for (name, bytes) in [("metrics.csv", &metrics), ("summary.csv", &summary)]
        .into_iter()
        .chain(out.artifacts.iter().map(|(k, v)| (k.as_str(), v)))
    {
        write_atomic(&cfg.out_dir.join(name), bytes)?;
        files.insert(name.to_string(), hash_bytes(bytes));
    }
    let manifest = ExperimentManifest {
        kind: cfg.kind,
        name: cfg.name.clone(),
        config: serde_json::to_value(cfg)?,
        files,
        failures: out.failures.clone(),
    };
    write_atomic(&cfg.out_dir.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(out)
}
