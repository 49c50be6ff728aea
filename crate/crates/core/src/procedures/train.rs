use ndarray::{Array1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::config::{BatchSampler, TrainConfig};
use crate::diffnet::{MlpNet, ParamVector};
use crate::rng::{derive_seed, probe_matrix, rng_from_seed};
use crate::scorezoo::TrainableModel;
use crate::{Error, Real, Result};

/// One outer iteration of LSD training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsdStep {
    pub iter: usize,
    /// `mean(s − r)` on the last critic batch (NaN when the critic is frozen).
    pub critic_objective: f64,
    /// `mean ⟨f(x), score(x)⟩` on the model batch before the model update.
    pub model_pairing: f64,
    /// Checkpoint score, when a checkpoint callback ran at this iteration.
    pub checkpoint: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct LsdTraining<T, M> {
    pub model: M,
    pub critic: MlpNet<T>,
    pub history: Vec<LsdStep>,
    /// Iteration of the returned model when checkpointing was requested.
    pub selected_iter: Option<usize>,
}

/// Scores a model for checkpoint selection; higher is better.
pub type CheckpointFn<'a, M> = &'a dyn Fn(&M) -> Result<f64>;

/// Extra knobs for [`train_lsd_with`].
pub struct LsdOptions<'a, T, M> {
    pub initial_critic: Option<MlpNet<T>>,
    /// Skip critic updates entirely.
    pub freeze_critic: bool,
    /// Called every `val_every` iterations and at the end; the model with the
    /// highest returned value is kept.
    pub checkpoint: Option<CheckpointFn<'a, M>>,
}

impl<T, M> Default for LsdOptions<'_, T, M> {
    fn default() -> Self {
        LsdOptions {
            initial_critic: None,
            freeze_critic: false,
            checkpoint: None,
        }
    }
}

/// Trains `model` on samples `x` by alternating `C` critic ascent steps on
/// `LSDE − R_λ` with one model descent step on `mean ⟨f(x), score_θ(x)⟩`,
/// the critic's output held fixed during the model step.
pub fn train_lsd<T: Real, M: TrainableModel<T>>(model: M, x: ArrayView2<T>, cfg: &TrainConfig) -> Result<LsdTraining<T, M>> {
    train_lsd_with(model, x, cfg, LsdOptions::default())
}

pub fn train_lsd_with<T: Real, M: TrainableModel<T>>(
    mut model: M,
    x: ArrayView2<T>,
    cfg: &TrainConfig,
    options: LsdOptions<'_, T, M>,
) -> Result<LsdTraining<T, M>> {
    cfg.validate(x.nrows())?;
    let d = model.dim();
    if x.ncols() != d {
        return Err(Error::shape("training samples", d, x.ncols()));
    }
    let mut critic = match options.initial_critic {
        Some(c) if c.d_in() != d || c.d_out() != d => {
            return Err(Error::shape("initial critic", d, c.d_in()));
        }
        Some(c) => c,
        None => cfg.init_critic(d, derive_seed(cfg.seed, 0))?,
    };
    let mut critic_batches = BatchSampler::new(x.nrows(), cfg.batch_size, derive_seed(cfg.seed, 1));
    let mut model_batches = BatchSampler::new(x.nrows(), cfg.batch_size, derive_seed(cfg.seed, 3));
    let mut probe_rng = rng_from_seed(derive_seed(cfg.seed, 2));
    let mut critic_adam = AdamState::new(critic.num_params(), cfg.critic_adam());
    let mut critic_params = critic.to_params().into_inner();
    let mut model_params = model.params();
    let mut model_adam = AdamState::new(model_params.len(), cfg.model_adam());
    let lambda = T::lit(cfg.lambda);
    let b = cfg.batch_size;
    let weights = Array1::from_elem(b, T::one() / T::from_count(b));

    let mut best: Option<(f64, M, usize)> = None;
    let mut history = Vec::with_capacity(cfg.iterations);
    if cfg.iterations == 0 {
        if let Some(check) = options.checkpoint {
            best = Some((check(&model)?, model.clone(), 0));
        }
    }

    for iter in 1..=cfg.iterations {
        let mut step = || -> Result<(f64, f64)> {
            let mut critic_objective = f64::NAN;
            if !options.freeze_critic {
                for _ in 0..cfg.critic_steps {
                    let xb = x.select(Axis(0), &critic_batches.next_indices());
                    let g = model.score_batch(xb.view())?;
                    let eps = probe_matrix(&mut probe_rng, cfg.probe, b, d);
                    let out = critic.lsde_batch(xb.view(), g.view(), eps.view(), lambda, weights.view(), weights.view(), None)?;
                    let mut grad = out.param_grad.into_inner();
                    if cfg.weight_decay > 0.0 {
                        grad.scaled_add(-T::lit(cfg.weight_decay), &critic_params);
                    }
                    critic_adam.update(&mut critic_params, grad.view(), true)?;
                    critic.set_params(&ParamVector(critic_params.clone()))?;
                    critic_objective = ((&out.s - &out.r).sum() / T::from_count(b)).as_f64();
                }
            }
            let xb = x.select(Axis(0), &model_batches.next_indices());
            let coef = critic.forward_batch(xb.view())?;
            let (pairing, grad) = model.score_pairing_grad(xb.view(), coef.view())?;
            if !pairing.is_finite() {
                return Err(Error::Numeric {
                    context: "model objective",
                    index: 0,
                });
            }
            model_adam.update(&mut model_params, grad.view(), false)?;
            model.set_params(model_params.view())?;
            Ok((critic_objective, pairing.as_f64()))
        };
        let (critic_objective, model_pairing) = step().map_err(|e| e.at_iteration(iter))?;
        let mut checkpoint = None;
        if let Some(check) = options.checkpoint {
            if iter == cfg.iterations || iter % cfg.val_every == 0 {
                let value = check(&model).map_err(|e| e.at_iteration(iter))?;
                checkpoint = Some(value);
                if best.as_ref().is_none_or(|(v, _, _)| value > *v) {
                    best = Some((value, model.clone(), iter));
                }
            }
        }
        history.push(LsdStep {
            iter,
            critic_objective,
            model_pairing,
            checkpoint,
        });
    }

    let (model, selected_iter) = match best {
        Some((_, m, it)) => (m, Some(it)),
        None => (model, None),
    };
    Ok(LsdTraining {
        model,
        critic,
        history,
        selected_iter,
    })
}
