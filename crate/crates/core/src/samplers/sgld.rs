use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, normal, normal_matrix, rng_from_seed};
use crate::scorezoo::ScoreModel;
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SgldInit {
    UniformBox { low: f64, high: f64 },
    Gaussian { std: f64 },
    /// Rows drawn with replacement from a supplied data matrix.
    Data,
}

/// Tempered Langevin: `x ← x + ε ∇log q(x) + N(0, σ²I)`. Untempered Langevin
/// is the special case `ε = σ²/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgldConfig {
    pub step_size: f64,
    pub noise_scale: f64,
    pub steps: usize,
    pub init: SgldInit,
}

impl Default for SgldConfig {
    fn default() -> Self {
        SgldConfig {
            step_size: 1.0,
            noise_scale: 0.01,
            steps: 1000,
            init: SgldInit::UniformBox { low: -1.0, high: 1.0 },
        }
    }
}

impl SgldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig(format!("sgld step size must be >= 0, got {}", self.step_size)));
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!("sgld noise scale must be > 0, got {}", self.noise_scale)));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("sgld needs at least one step".into()));
        }
        match self.init {
            SgldInit::UniformBox { low, high } if !(low < high) => {
                Err(Error::InvalidConfig(format!("uniform init box [{low}, {high}] is empty")))
            }
            SgldInit::Gaussian { std } if !(std > 0.0) => Err(Error::InvalidConfig("gaussian init std must be > 0".into())),
            _ => Ok(()),
        }
    }
}

/// Samples together with everything that determined them. Only
/// [`sgld_sample`] builds one, so metadata can't be dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct SgldBatch<T> {
    samples: Array2<T>,
    initial: Array2<T>,
    config: SgldConfig,
    seed: u64,
}

impl<T: Real> SgldBatch<T> {
    pub fn samples(&self) -> &Array2<T> {
        &self.samples
    }

    pub fn initial(&self) -> &Array2<T> {
        &self.initial
    }

    pub fn config(&self) -> &SgldConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn into_samples(self) -> Array2<T> {
        self.samples
    }
}

/// Runs `n` independent chains. The initial states come from a seed stream
/// that does not depend on the sampler settings, so configs that differ only
/// in `ε`, `σ` or `T` share their starting points.
pub fn sgld_sample<T: Real, M: ScoreModel<T> + ?Sized>(
    model: &M,
    cfg: &SgldConfig,
    n: usize,
    seed: u64,
    data: Option<ArrayView2<T>>,
) -> Result<SgldBatch<T>> {
    cfg.validate()?;
    let d = model.dim();
    let mut init_rng = rng_from_seed(derive_seed(seed, 0));
    let initial: Array2<T> = match cfg.init {
        SgldInit::UniformBox { low, high } => {
            Array2::from_shape_simple_fn((n, d), || T::lit(init_rng.random_range(low..high)))
        }
        SgldInit::Gaussian { std } => normal_matrix::<T, _>(&mut init_rng, n, d) * T::lit(std),
        SgldInit::Data => {
            let data = data.ok_or_else(|| Error::InvalidConfig("data init needs a data matrix".into()))?;
            if data.nrows() == 0 || data.ncols() != d {
                return Err(Error::shape("sgld init data", format!("(>0, {d})"), format!("{:?}", data.dim())));
            }
            let rows: Vec<usize> = (0..n).map(|_| init_rng.random_range(0..data.nrows())).collect();
            data.select(Axis(0), &rows)
        }
    };
    let mut noise_rng = rng_from_seed(derive_seed(seed, 1));
    let eps = T::lit(cfg.step_size);
    let sigma = T::lit(cfg.noise_scale);
    let mut x = initial.clone();
    for step in 0..cfg.steps {
        let score = model.score_batch(x.view())?;
        x.zip_mut_with(&score, |xi, &s| *xi += eps * s + sigma * normal::<T, _>(&mut noise_rng));
        if let Some(row) = x.axis_iter(Axis(0)).position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric {
                context: "sgld state",
                index: row,
            }
            .at_iteration(step));
        }
    }
    Ok(SgldBatch {
        samples: x,
        initial,
        config: *cfg,
        seed,
    })
}
