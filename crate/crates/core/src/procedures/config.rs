use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::adam::AdamConfig;
use crate::diffnet::{Activation, MlpNet};
use crate::rng::{permutation, rng_from_seed, ProbeKind, SeededRng};
use crate::{Error, Real, Result};

/// Disjoint train / validation / test rows drawn from one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitData<T> {
    pub train: Array2<T>,
    pub val: Array2<T>,
    pub test: Array2<T>,
}

impl<T: Real> SplitData<T> {
    /// Wraps pre-split matrices, checking they are nonempty and agree on width.
    pub fn new(train: Array2<T>, val: Array2<T>, test: Array2<T>) -> Result<Self> {
        let d = train.ncols();
        for (part, name) in [(&train, "train"), (&val, "val"), (&test, "test")] {
            if part.nrows() == 0 {
                return Err(Error::InvalidConfig(format!("{name} split is empty")));
            }
            if part.ncols() != d {
                return Err(Error::shape("split columns", d, part.ncols()));
            }
        }
        Ok(SplitData { train, val, test })
    }

    /// Seeded permutation of the rows, then contiguous slices sized by
    /// `ratios` (rounded, with the test slice taking the remainder).
    pub fn from_samples(x: ArrayView2<T>, ratios: [f64; 3], seed: u64) -> Result<Self> {
        if ratios.iter().any(|r| !(*r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split ratios must be positive and sum to 1, got {ratios:?}"
            )));
        }
        let n = x.nrows();
        let n_train = (ratios[0] * n as f64).round() as usize;
        let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train.min(n));
        let idx = permutation(&mut rng_from_seed(seed), n);
        let take = |range: std::ops::Range<usize>| x.select(Axis(0), &idx[range]);
        let end_val = (n_train + n_val).min(n);
        Self::new(take(0..n_train.min(n)), take(n_train.min(n)..end_val), take(end_val..n))
    }

    pub fn dim(&self) -> usize {
        self.train.ncols()
    }
}

/// Settings shared by critic fitting, model comparison, LSD training and the
/// ICA baselines. Fields a procedure does not use are ignored by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the critic's L2 penalty.
    pub lambda: f64,
    /// Critic updates per model update in LSD training.
    pub critic_steps: usize,
    /// Total iterations (critic updates when fitting a critic alone).
    pub iterations: usize,
    pub batch_size: usize,
    pub critic_lr: f64,
    pub model_lr: f64,
    pub seed: u64,
    pub probe: ProbeKind,
    /// Validation cadence in iterations.
    pub val_every: usize,
    /// Dropout rate on the critic's hidden layers (power fitting only).
    pub dropout: f64,
    /// L2 weight decay on critic parameters.
    pub weight_decay: f64,
    pub critic_hidden: Vec<usize>,
    pub activation: Activation,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.5,
            critic_steps: 5,
            iterations: 1000,
            batch_size: 100,
            critic_lr: 1e-3,
            model_lr: 1e-3,
            seed: 0,
            probe: ProbeKind::Gaussian,
            val_every: 100,
            dropout: 0.0,
            weight_decay: 0.0,
            critic_hidden: vec![300, 300],
            activation: Activation::Swish,
            beta1: 0.5,
            beta2: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, train_size: usize) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if self.critic_steps == 0 {
            return fail("critic_steps must be >= 1".into());
        }
        if self.batch_size == 0 || self.batch_size > train_size {
            return fail(format!("batch size {} must be in 1..={train_size}", self.batch_size));
        }
        if self.val_every == 0 {
            return fail("val_every must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout rate must be in [0, 1), got {}", self.dropout));
        }
        if !(self.weight_decay >= 0.0) {
            return fail("weight decay must be >= 0".into());
        }
        if self.critic_hidden.contains(&0) {
            return fail("hidden layer widths must be >= 1".into());
        }
        self.critic_adam().validate()?;
        self.model_adam().validate()
    }

    pub fn critic_adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::adversarial(self.critic_lr)
        }
    }

    pub fn model_adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::adversarial(self.model_lr)
        }
    }

    /// Layer widths `[d, hidden.., d]` of a critic for `d`-dimensional data.
    pub fn critic_dims(&self, d: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.critic_hidden.len() + 2);
        dims.push(d);
        dims.extend_from_slice(&self.critic_hidden);
        dims.push(d);
        dims
    }

    pub fn init_critic<T: Real>(&self, d: usize, seed: u64) -> Result<MlpNet<T>> {
        MlpNet::init(&self.critic_dims(d), self.activation, seed)
    }
}

/// Minibatches drawn without replacement within an epoch; a fresh
/// permutation starts each epoch.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    rng: SeededRng,
    order: Vec<usize>,
    cursor: usize,
    batch: usize,
    n: usize,
}

impl BatchSampler {
    pub fn new(n: usize, batch: usize, seed: u64) -> Self {
        BatchSampler {
            rng: rng_from_seed(seed),
            order: Vec::new(),
            cursor: n,
            batch: batch.min(n).max(1),
            n,
        }
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch);
        while out.len() < self.batch {
            if self.cursor >= self.n {
                self.order = permutation(&mut self.rng, self.n);
                self.cursor = 0;
            }
            let take = (self.batch - out.len()).min(self.n - self.cursor);
            out.extend_from_slice(&self.order[self.cursor..self.cursor + take]);
            self.cursor += take;
        }
        out
    }
}
