use ndarray::{Array1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::config::{BatchSampler, TrainConfig};
use crate::discrepancy::sliced_sm_objective;
use crate::rng::derive_seed;
use crate::scorezoo::{IcaModel, LogDensity, TrainableModel};
use crate::{Error, Real, Result};

/// One checkpoint of an ICA baseline run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcaRecord {
    pub iter: usize,
    /// Mean log-likelihood (ML) or sliced SM loss on the last batch.
    pub train_objective: f64,
    pub val_log_likelihood: f64,
}

#[derive(Debug, Clone)]
pub struct IcaFit<T> {
    pub model: IcaModel<T>,
    pub history: Vec<IcaRecord>,
    pub selected_iter: usize,
}

enum Objective {
    MaxLikelihood,
    SlicedScoreMatching,
}

fn run<T: Real>(
    init: IcaModel<T>,
    train: ArrayView2<T>,
    val: ArrayView2<T>,
    cfg: &TrainConfig,
    objective: Objective,
) -> Result<IcaFit<T>> {
    cfg.validate(train.nrows())?;
    let d = init.mixing().nrows();
    if train.ncols() != d || val.ncols() != d {
        return Err(Error::shape("ica data columns", d, train.ncols().max(val.ncols())));
    }
    if val.nrows() == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut model = init;
    let mut params = model.params();
    let mut adam = AdamState::<T>::new(params.len(), AdamConfig::standard(cfg.model_lr));
    let mut batches = BatchSampler::new(train.nrows(), cfg.batch_size, derive_seed(cfg.seed, 1));

    let mut best = model.clone();
    let mut best_ll = model.mean_log_density(val)?.as_f64();
    let mut selected_iter = 0;
    let mut history = vec![IcaRecord {
        iter: 0,
        train_objective: f64::NAN,
        val_log_likelihood: best_ll,
    }];

    for iter in 1..=cfg.iterations {
        let mut step = || -> Result<f64> {
            let xb = train.select(Axis(0), &batches.next_indices());
            let (value, grad, maximize) = match objective {
                Objective::MaxLikelihood => {
                    let (ll, g) = model.log_likelihood_grad(xb.view())?;
                    (ll, Array1::from_iter(g.iter().copied()), true)
                }
                Objective::SlicedScoreMatching => {
                    let (loss, g) = sliced_sm_objective(&model, xb.view(), derive_seed(cfg.seed, 1000 + iter as u64))?;
                    (loss, g, false)
                }
            };
            if !value.is_finite() || grad.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    context: "ica objective",
                    index: iter,
                });
            }
            adam.update(&mut params, grad.view(), maximize)?;
            model.set_params(params.view())?;
            Ok(value.as_f64())
        };
        let train_objective = step().map_err(|e| e.at_iteration(iter))?;
        if iter == cfg.iterations || iter % cfg.val_every == 0 {
            let ll = model.mean_log_density(val).map_err(|e| e.at_iteration(iter))?.as_f64();
            if !ll.is_finite() {
                return Err(Error::Numeric {
                    context: "ica validation log-likelihood",
                    index: iter,
                }
                .at_iteration(iter));
            }
            if ll > best_ll {
                best_ll = ll;
                best = model.clone();
                selected_iter = iter;
            }
            history.push(IcaRecord {
                iter,
                train_objective,
                val_log_likelihood: ll,
            });
        }
    }
    Ok(IcaFit {
        model: best,
        history,
        selected_iter,
    })
}

/// Maximum likelihood by Adam ascent on the exact mean log-density. The
/// checkpoint with the highest validation log-likelihood is returned.
pub fn train_ica_ml<T: Real>(
    init: IcaModel<T>,
    train: ArrayView2<T>,
    val: ArrayView2<T>,
    cfg: &TrainConfig,
) -> Result<IcaFit<T>> {
    run(init, train, val, cfg, Objective::MaxLikelihood)
}

/// Sliced score matching by Adam descent. A non-finite loss or a singular
/// mixing matrix ends the run with an error tagged by iteration.
pub fn train_ica_sm<T: Real>(
    init: IcaModel<T>,
    train: ArrayView2<T>,
    val: ArrayView2<T>,
    cfg: &TrainConfig,
) -> Result<IcaFit<T>> {
    run(init, train, val, cfg, Objective::SlicedScoreMatching)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::ica_sample;
    use ndarray::{array, Array2};

    fn cfg(iterations: usize, lr: f64) -> TrainConfig {
        TrainConfig {
            iterations,
            batch_size: 100,
            model_lr: lr,
            val_every: 100,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn one_dimensional_ml_recovers_scale() {
        let truth = IcaModel::new(array![[2.0]]).unwrap();
        let x = ica_sample(&truth, 4000, 1).unwrap();
        let val = ica_sample(&truth, 500, 2).unwrap();
        // Laplace scale MLE: mean |x|
        let mle = x.iter().map(|v: &f64| v.abs()).sum::<f64>() / x.len() as f64;
        let fit = train_ica_ml(IcaModel::new(array![[0.5]]).unwrap(), x.view(), val.view(), &cfg(3000, 0.01)).unwrap();
        let w = fit.model.mixing()[[0, 0]].abs();
        assert!((w - 2.0).abs() < 0.1, "{w}");
        assert!((w - mle).abs() < 0.05, "{w} vs {mle}");
    }

    #[test]
    fn zero_iterations_return_init() {
        let init = IcaModel::<f64>::random(3, 1).unwrap();
        let x = ica_sample(&init, 200, 1).unwrap();
        let fit = train_ica_sm(init.clone(), x.view(), x.view(), &cfg(0, 1e-3)).unwrap();
        assert_eq!(fit.model, init);
        assert_eq!(fit.history.len(), 1);
    }

    #[test]
    fn ml_reaches_truth_and_sm_drifts_to_large_scale() {
        let truth = IcaModel::<f64>::random(3, 7).unwrap();
        let train = ica_sample(&truth, 3000, 1).unwrap();
        let val = ica_sample(&truth, 500, 2).unwrap();
        let test = ica_sample(&truth, 2000, 3).unwrap();
        let init = IcaModel::random(3, 99).unwrap();
        let ml = train_ica_ml(init.clone(), train.view(), val.view(), &cfg(3000, 5e-3)).unwrap();
        let ll = |m: &IcaModel<f64>| m.mean_log_density(test.view()).unwrap();
        assert!((ll(&ml.model) - ll(&truth)).abs() < 0.1, "{} vs {}", ll(&ml.model), ll(&truth));

        // With a Laplace prior the Hessian term vanishes off the kinks, so the
        // sliced objective shrinks by inflating the mixing matrix.
        let sm = train_ica_sm(init.clone(), train.view(), val.view(), &cfg(2000, 5e-3)).unwrap();
        let last = sm.history.last().unwrap();
        assert!(last.train_objective < 0.1);
        assert!(last.val_log_likelihood < sm.history[0].val_log_likelihood);
        assert_eq!(sm.selected_iter, 0);
        assert_eq!(sm.model, init);
    }

    #[test]
    fn shape_errors() {
        let init = IcaModel::<f64>::random(2, 1).unwrap();
        let x = Array2::<f64>::zeros((200, 3));
        assert!(train_ica_ml(init, x.view(), x.view(), &cfg(1, 1e-3)).is_err());
    }
}
