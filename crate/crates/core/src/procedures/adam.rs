use ndarray::{Array1, ArrayView1, Zip};
use serde::{Deserialize, Serialize};

use crate::diffnet::ParamVector;
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    /// Momentum used when both players of the minimax game train.
    pub fn adversarial(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.5,
            beta2: 0.9,
            epsilon: 1e-8,
        }
    }

    /// Textbook defaults for single-objective baselines.
    pub fn standard(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid Adam settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Array1<T>,
    pub second: Array1<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            first: Array1::zeros(len),
            second: Array1::zeros(len),
        }
    }

    /// Bias-corrected Adam update in place. `maximize` ascends instead of descending.
    pub fn update(&mut self, params: &mut Array1<T>, grad: ArrayView1<T>, maximize: bool) -> Result<()> {
        if params.len() != self.first.len() || grad.len() != self.first.len() {
            return Err(Error::shape("adam parameters", self.first.len(), params.len().max(grad.len())));
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let corr1 = T::one() - T::lit(c.beta1.powi(self.step.min(i32::MAX as u64) as i32));
        let corr2 = T::one() - T::lit(c.beta2.powi(self.step.min(i32::MAX as u64) as i32));
        let lr = T::lit(c.learning_rate);
        let eps = T::lit(c.epsilon);
        let sign = if maximize { T::one() } else { -T::one() };
        Zip::from(params)
            .and(&mut self.first)
            .and(&mut self.second)
            .and(&grad)
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = *m / corr1;
                let v_hat = *v / corr2;
                *p += sign * lr * m_hat / (v_hat.sqrt() + eps);
            });
        Ok(())
    }
}

/// Functional form of [`AdamState::update`].
pub fn adam_step<T: Real>(
    state: &AdamState<T>,
    params: &ParamVector<T>,
    grad: &ParamVector<T>,
    maximize: bool,
) -> Result<(ParamVector<T>, AdamState<T>)> {
    let mut next = state.clone();
    let mut p = params.0.clone();
    next.update(&mut p, grad.view(), maximize)?;
    Ok((ParamVector(p), next))
}
