use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::adam::AdamState;
use super::config::{BatchSampler, SplitData, TrainConfig};
use crate::diffnet::{DropoutMasks, MlpNet};
use crate::discrepancy::{lsd_estimate, power_objective, stein_terms_exact_with_scores, DiscrepancyEstimate, SteinTerms};
use crate::rng::{derive_seed, probe_matrix, rng_from_seed};
use crate::scorezoo::ScoreModel;
use crate::{Error, Real, Result};

/// One validation checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValRecord {
    pub iter: usize,
    /// Training objective on the most recent batch (NaN before the first update).
    pub train_objective: f64,
    pub val_mean: f64,
    pub val_std: f64,
}

impl ValRecord {
    /// Variance-aware selection score `μ − σ`.
    pub fn score(&self) -> f64 {
        self.val_mean - self.val_std
    }
}

/// How a critic checkpoint is picked from the validation history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Maximize `μ − σ` of the validation statistic.
    #[default]
    MeanMinusStd,
    /// Maximize the validation mean alone.
    Mean,
}

impl Selection {
    fn value(self, r: &ValRecord) -> f64 {
        match self {
            Selection::MeanMinusStd => r.score(),
            Selection::Mean => r.val_mean,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CriticFit<T> {
    pub critic: MlpNet<T>,
    pub history: Vec<ValRecord>,
    pub selected_iter: usize,
}

fn is_checkpoint(iter: usize, every: usize, total: usize) -> bool {
    iter == total || iter.is_multiple_of(every)
}

fn scores_of<T: Real, M: ScoreModel<T> + ?Sized>(model: &M, x: ArrayView2<T>) -> Result<Array2<T>> {
    if x.ncols() != model.dim() {
        return Err(Error::shape("sample columns", model.dim(), x.ncols()));
    }
    model.score_batch(x)
}

/// Fits a critic for one model by minibatch ascent on `LSDE − R_λ`, keeping
/// the checkpoint with the best validation `μ − σ` of the exact-trace LSD.
pub fn fit_critic_lsd<T: Real, M: ScoreModel<T> + ?Sized>(
    model: &M,
    data: &SplitData<T>,
    cfg: &TrainConfig,
) -> Result<CriticFit<T>> {
    fit_critic_lsd_with(model, data, cfg, Selection::MeanMinusStd)
}

pub fn fit_critic_lsd_with<T: Real, M: ScoreModel<T> + ?Sized>(
    model: &M,
    data: &SplitData<T>,
    cfg: &TrainConfig,
    selection: Selection,
) -> Result<CriticFit<T>> {
    cfg.validate(data.train.nrows())?;
    let d = model.dim();
    let train_scores = scores_of(model, data.train.view())?;
    let val_scores = scores_of(model, data.val.view())?;
    let mut critic: MlpNet<T> = cfg.init_critic(d, derive_seed(cfg.seed, 0))?;
    let mut sampler = BatchSampler::new(data.train.nrows(), cfg.batch_size, derive_seed(cfg.seed, 1));
    let mut probe_rng = rng_from_seed(derive_seed(cfg.seed, 2));
    let mut adam = AdamState::new(critic.num_params(), cfg.critic_adam());
    let lambda = T::lit(cfg.lambda);
    let b = cfg.batch_size;
    let weights = Array1::from_elem(b, T::one() / T::from_count(b));

    let validate = |critic: &MlpNet<T>, iter: usize, train_objective: f64| -> Result<ValRecord> {
        let est = lsd_estimate(&stein_terms_exact_with_scores(critic, data.val.view(), val_scores.view())?)?;
        Ok(ValRecord {
            iter,
            train_objective,
            val_mean: est.mean.as_f64(),
            val_std: est.std.as_f64(),
        })
    };

    let mut best = critic.clone();
    let first = validate(&critic, 0, f64::NAN)?;
    let mut best_value = selection.value(&first);
    let mut selected_iter = 0;
    let mut history = if cfg.iterations == 0 { vec![first] } else { Vec::new() };

    let mut params = critic.to_params().into_inner();
    for iter in 1..=cfg.iterations {
        let idx = sampler.next_indices();
        let x = data.train.select(Axis(0), &idx);
        let g = train_scores.select(Axis(0), &idx);
        let eps = probe_matrix(&mut probe_rng, cfg.probe, b, d);
        let out = critic
            .lsde_batch(x.view(), g.view(), eps.view(), lambda, weights.view(), weights.view(), None)
            .map_err(|e| e.at_iteration(iter))?;
        let mut grad = out.param_grad.into_inner();
        if cfg.weight_decay > 0.0 {
            grad.scaled_add(-T::lit(cfg.weight_decay), &params);
        }
        adam.update(&mut params, grad.view(), true)?;
        critic.set_params(&crate::diffnet::ParamVector(params.clone()))?;
        if is_checkpoint(iter, cfg.val_every, cfg.iterations) {
            let objective = ((&out.s - &out.r).sum() / T::from_count(b)).as_f64();
            let rec = validate(&critic, iter, objective).map_err(|e| e.at_iteration(iter))?;
            if selection.value(&rec) > best_value {
                best_value = selection.value(&rec);
                best = critic.clone();
                selected_iter = iter;
            }
            history.push(rec);
        }
    }
    Ok(CriticFit {
        critic: best,
        history,
        selected_iter,
    })
}

/// Fits a test critic by full-batch ascent on `mean/std` of the Hutchinson
/// Stein terms minus `R_λ`, with optional dropout and weight decay. The
/// checkpoint with the best validation `mean/std` (exact trace, no dropout)
/// is returned. History records carry `𝒫` as `val_mean` and `0` as `val_std`.
pub fn fit_critic_power<T: Real, M: ScoreModel<T> + ?Sized>(
    model: &M,
    data: &SplitData<T>,
    cfg: &TrainConfig,
) -> Result<CriticFit<T>> {
    let n = data.train.nrows();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    TrainConfig {
        batch_size: n,
        ..cfg.clone()
    }
    .validate(n)?;
    let d = model.dim();
    let train_scores = scores_of(model, data.train.view())?;
    let val_scores = scores_of(model, data.val.view())?;
    let mut critic: MlpNet<T> = cfg.init_critic(d, derive_seed(cfg.seed, 0))?;
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 2));
    let mut adam = AdamState::new(critic.num_params(), cfg.critic_adam());
    let lambda = T::lit(cfg.lambda);
    let inv_n = T::one() / T::from_count(n);

    let validate = |critic: &MlpNet<T>| -> Result<f64> {
        let terms = stein_terms_exact_with_scores(critic, data.val.view(), val_scores.view())?;
        Ok(power_objective(&terms)?.as_f64())
    };

    let mut best = critic.clone();
    let mut best_value = validate(&critic)?;
    let mut selected_iter = 0;
    let mut history = Vec::new();
    if cfg.iterations == 0 {
        history.push(ValRecord {
            iter: 0,
            train_objective: f64::NAN,
            val_mean: best_value,
            val_std: 0.0,
        });
    }

    let mut params = critic.to_params().into_inner();
    for iter in 1..=cfg.iterations {
        let eps = probe_matrix(&mut rng, cfg.probe, n, d);
        let masks = (cfg.dropout > 0.0).then(|| DropoutMasks::sample(&critic, n, cfg.dropout, &mut rng));
        let mut power = T::zero();
        let out = critic
            .lsde_batch_weighted(
                data.train.view(),
                train_scores.view(),
                eps.view(),
                lambda,
                masks.as_ref(),
                |s, _| {
                    let (p, w) = crate::discrepancy::power_objective_grad(s)?;
                    power = p;
                    Ok((w, Array1::from_elem(n, inv_n)))
                },
            )
            .map_err(|e| e.at_iteration(iter))?;
        let mut grad = out.param_grad.into_inner();
        if cfg.weight_decay > 0.0 {
            grad.scaled_add(-T::lit(cfg.weight_decay), &params);
        }
        adam.update(&mut params, grad.view(), true)?;
        critic.set_params(&crate::diffnet::ParamVector(params.clone()))?;
        if is_checkpoint(iter, cfg.val_every, cfg.iterations) {
            let objective = (power - out.r.sum() * inv_n).as_f64();
            let value = validate(&critic).map_err(|e| e.at_iteration(iter))?;
            if value > best_value {
                best_value = value;
                best = critic.clone();
                selected_iter = iter;
            }
            history.push(ValRecord {
                iter,
                train_objective: objective,
                val_mean: value,
                val_std: 0.0,
            });
        }
    }
    Ok(CriticFit {
        critic: best,
        history,
        selected_iter,
    })
}

/// Outcome of the linear-time goodness-of-fit test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GofResult {
    pub t: f64,
    pub threshold: f64,
    pub alpha: f64,
    pub reject: bool,
    pub n_test: usize,
}

pub const MIN_GOF_SAMPLES: usize = 30;

/// Upper `alpha` quantile of the standard normal.
pub fn normal_threshold(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    Ok(unit.inverse_cdf(1.0 - alpha))
}

/// `t = √n · mean/std` of the terms, rejecting when `t` exceeds the normal quantile.
pub fn gof_test_from_terms<T: Real>(terms: &SteinTerms<T>, alpha: f64) -> Result<GofResult> {
    let n = terms.len();
    if n < MIN_GOF_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_GOF_SAMPLES,
            got: n,
        });
    }
    let threshold = normal_threshold(alpha)?;
    let est = lsd_estimate(terms)?;
    if !(est.std > T::zero()) {
        return Err(Error::Degenerate("test statistic has zero spread".into()));
    }
    let t = (T::from_count(n).sqrt() * est.mean / est.std).as_f64();
    Ok(GofResult {
        t,
        threshold,
        alpha,
        reject: t > threshold,
        n_test: n,
    })
}

/// Goodness-of-fit test of `model` on held-out samples with a fitted critic.
pub fn gof_test<T: Real, M: ScoreModel<T> + ?Sized>(
    model: &M,
    critic: &MlpNet<T>,
    x_test: ArrayView2<T>,
    alpha: f64,
) -> Result<GofResult> {
    if x_test.nrows() < MIN_GOF_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_GOF_SAMPLES,
            got: x_test.nrows(),
        });
    }
    let scores = scores_of(model, x_test)?;
    gof_test_from_terms(&stein_terms_exact_with_scores(critic, x_test, scores.view())?, alpha)
}

#[derive(Debug, Clone)]
pub struct RankedModel<T> {
    /// Position of the model in the input list.
    pub id: usize,
    pub estimate: DiscrepancyEstimate<T>,
    pub fit: CriticFit<T>,
}

/// Fits a fresh critic per model (seeds derived from `cfg.seed` and the
/// model's position), evaluates the exact-trace LSD on the test rows and
/// ranks models from best (lowest) to worst.
pub fn compare_models<T: Real, M: ScoreModel<T>>(
    models: &[M],
    data: &SplitData<T>,
    cfg: &TrainConfig,
) -> Result<Vec<RankedModel<T>>> {
    if models.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: models.len(),
        });
    }
    let mut ranked = models
        .iter()
        .enumerate()
        .map(|(id, model)| {
            let run = || -> Result<RankedModel<T>> {
                let per_model = TrainConfig {
                    seed: derive_seed(cfg.seed, id as u64),
                    ..cfg.clone()
                };
                let fit = fit_critic_lsd(model, data, &per_model)?;
                let scores = scores_of(model, data.test.view())?;
                let terms = stein_terms_exact_with_scores(&fit.critic, data.test.view(), scores.view())?;
                Ok(RankedModel {
                    id,
                    estimate: lsd_estimate(&terms)?,
                    fit,
                })
            };
            run().map_err(|e| e.for_model(id))
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| a.estimate.mean.partial_cmp(&b.estimate.mean).expect("finite").then(a.id.cmp(&b.id)));
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discrepancy::TraceKind;
    use crate::rng::normal_matrix;
    use crate::scorezoo::GaussianModel;
    use ndarray::Array1;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            iterations: 200,
            batch_size: 100,
            val_every: 50,
            critic_hidden: vec![16],
            critic_lr: 3e-3,
            ..TrainConfig::default()
        }
    }

    fn gaussian_split(d: usize, n: usize, shift: f64, seed: u64) -> SplitData<f64> {
        let x = normal_matrix::<f64, _>(&mut rng_from_seed(seed), n, d) + shift;
        SplitData::from_samples(x.view(), [0.8, 0.1, 0.1], seed).unwrap()
    }

    #[test]
    fn threshold_matches_quantile_table() {
        assert!((normal_threshold(0.05).unwrap() - 1.6449).abs() < 1e-4);
        assert!((normal_threshold(0.01).unwrap() - 2.3263).abs() < 1e-4);
        assert!(normal_threshold(0.0).is_err());
    }

    #[test]
    fn fabricated_terms_give_expected_statistic() {
        // N(1, 1) terms with n = 100: t ≈ √100 · 1/1 = 10
        let values: Array1<f64> = normal_matrix::<f64, _>(&mut rng_from_seed(4), 100, 1).column(0).to_owned() + 1.0;
        let terms = SteinTerms::new(values.clone(), TraceKind::ExactTrace).unwrap();
        let r = gof_test_from_terms(&terms, 0.05).unwrap();
        let est = lsd_estimate(&terms).unwrap();
        assert!((r.t - 10.0 * est.mean / est.std).abs() < 1e-12);
        assert!(r.t > 7.0 && r.t < 13.0 && r.reject);
        let noise = SteinTerms::new(values - 1.0, TraceKind::ExactTrace).unwrap();
        assert!(!gof_test_from_terms(&noise, 0.05).unwrap().reject);
        let constant = SteinTerms::new(Array1::from_elem(40, 0.5), TraceKind::ExactTrace).unwrap();
        assert!(matches!(gof_test_from_terms(&constant, 0.05), Err(Error::Degenerate(_))));
        let few = SteinTerms::new(Array1::from_elem(10, 0.5), TraceKind::ExactTrace).unwrap();
        assert!(matches!(gof_test_from_terms(&few, 0.05), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn zero_iterations_returns_initial_critic() {
        let data = gaussian_split(2, 500, 0.0, 1);
        let cfg = TrainConfig {
            iterations: 0,
            ..small_cfg()
        };
        let fit = fit_critic_lsd(&GaussianModel::standard(2), &data, &cfg).unwrap();
        let init: MlpNet<f64> = cfg.init_critic(2, derive_seed(cfg.seed, 0)).unwrap();
        assert_eq!(fit.critic.to_params(), init.to_params());
        assert_eq!((fit.history.len(), fit.selected_iter), (1, 0));
    }

    #[test]
    fn history_cadence_and_determinism() {
        let data = gaussian_split(2, 500, 0.5, 2);
        let model = GaussianModel::standard(2);
        let fit = fit_critic_lsd(&model, &data, &small_cfg()).unwrap();
        let iters: Vec<usize> = fit.history.iter().map(|r| r.iter).collect();
        assert_eq!(iters, vec![50, 100, 150, 200]);
        let again = fit_critic_lsd(&model, &data, &small_cfg()).unwrap();
        assert_eq!(fit.critic.to_params(), again.critic.to_params());
        let power = fit_critic_power(&model, &data, &TrainConfig { iterations: 120, ..small_cfg() }).unwrap();
        assert_eq!(power.history.iter().map(|r| r.iter).collect::<Vec<_>>(), vec![50, 100, 120]);
    }

    #[test]
    fn null_critic_test_lsd_is_near_zero() {
        let data = gaussian_split(3, 2000, 0.0, 3);
        let model = GaussianModel::standard(3);
        let fit = fit_critic_lsd(&model, &data, &small_cfg()).unwrap();
        let scores = model.score_batch(data.test.view()).unwrap();
        let est = lsd_estimate(&stein_terms_exact_with_scores(&fit.critic, data.test.view(), scores.view()).unwrap()).unwrap();
        assert!(est.mean.abs() < 2.0 * est.standard_error(), "{est:?}");
    }

    #[test]
    fn closer_gaussian_ranks_first() {
        let data = gaussian_split(2, 1500, 0.0, 5);
        let models = vec![
            GaussianModel::isotropic(Array1::from_elem(2, 1.0), 1.0).unwrap(),
            GaussianModel::isotropic(Array1::from_elem(2, 0.3), 1.0).unwrap(),
        ];
        let ranked = compare_models(&models, &data, &small_cfg()).unwrap();
        assert_eq!(ranked.iter().map(|r| r.id).collect::<Vec<_>>(), vec![1, 0]);
        assert!(compare_models(&models[..1], &data, &small_cfg()).is_err());
        let wrong = vec![GaussianModel::standard(3), GaussianModel::standard(3)];
        match compare_models(&wrong, &data, &small_cfg()) {
            Err(Error::During { label: "model", at: 0, .. }) => {}
            other => panic!("expected model-tagged error, got {other:?}"),
        }
    }

    #[test]
    fn power_fit_detects_shift() {
        let data = gaussian_split(2, 1000, 0.4, 6);
        let model = GaussianModel::standard(2);
        let cfg = TrainConfig {
            iterations: 100,
            dropout: 0.1,
            weight_decay: 5e-4,
            ..small_cfg()
        };
        let fit = fit_critic_power(&model, &data, &cfg).unwrap();
        let r = gof_test(&model, &fit.critic, data.test.view(), 0.05).unwrap();
        assert!(r.reject, "{r:?}");
    }
}
