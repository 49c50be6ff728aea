//! Unnormalized density models, each exposed through its score
//! `∇_x log q(x)` and, where tractable, its log-density.

mod ebm;
mod gaussian;
mod gbrbm;
mod ica;

pub use ebm::DeepEbmModel;
pub use gaussian::{GaussianModel, Variance};
pub use gbrbm::{perturb_rbm, GbrbmModel};
pub use ica::{IcaModel, KinkSmoothedIca};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::container::{Container, Kind};
use crate::{Error, Real, Result};

/// A density known only through its score.
pub trait ScoreModel<T: Real>: Send + Sync {
    fn dim(&self) -> usize;

    /// Scores for each row of `x`.
    fn score_batch(&self, x: ArrayView2<T>) -> Result<Array2<T>>;

    fn score(&self, x: ArrayView1<T>) -> Result<Array1<T>> {
        Ok(self.score_batch(x.insert_axis(Axis(0)))?.row(0).to_owned())
    }
}

/// Models with a closed-form log-density. For EBMs and RBMs this is the
/// unnormalized value (`is_normalized` returns false).
pub trait LogDensity<T: Real>: ScoreModel<T> {
    fn log_density(&self, x: ArrayView1<T>) -> Result<T>;

    fn is_normalized(&self) -> bool;

    fn log_density_batch(&self, x: ArrayView2<T>) -> Result<Array1<T>> {
        x.axis_iter(Axis(0)).map(|r| self.log_density(r)).collect()
    }

    fn mean_log_density(&self, x: ArrayView2<T>) -> Result<T> {
        let lp = self.log_density_batch(x)?;
        Ok(lp.sum() / T::from_count(lp.len().max(1)))
    }
}

/// Models whose parameters can be fit by the adversarial Stein loop.
pub trait TrainableModel<T: Real>: ScoreModel<T> + Clone {
    fn params(&self) -> Array1<T>;

    fn set_params(&mut self, params: ArrayView1<T>) -> Result<()>;

    /// `mean_i ⟨coef_i, score_θ(x_i)⟩` and its gradient in θ, with `coef`
    /// held constant. This is the only θ-dependent part of the Stein pairing.
    fn score_pairing_grad(&self, x: ArrayView2<T>, coef: ArrayView2<T>) -> Result<(T, Array1<T>)>;
}

/// Sliced score matching, `½‖s(x)‖² + εᵀ(∂s/∂x)ε` per row with one probe per row.
pub trait SlicedScoreMatching<T: Real>: ScoreModel<T> {
    fn sliced_sm_terms(&self, x: ArrayView2<T>, probes: ArrayView2<T>) -> Result<Array1<T>>;

    /// Mean objective and its parameter gradient.
    fn sliced_sm_grad(&self, x: ArrayView2<T>, probes: ArrayView2<T>) -> Result<(T, Array1<T>)>;
}

pub(crate) fn check_rows<T: Real>(x: &ArrayView2<T>, d: usize, context: &'static str) -> Result<()> {
    if x.ncols() != d {
        return Err(Error::shape(context, format!("{d} columns"), x.ncols()));
    }
    Ok(())
}

pub(crate) fn check_len<T: Real>(x: &ArrayView1<T>, d: usize, context: &'static str) -> Result<()> {
    if x.len() != d {
        return Err(Error::shape(context, d, x.len()));
    }
    Ok(())
}

/// Any model that can be loaded from the shared container format.
#[derive(Debug, Clone)]
pub enum SavedModel<T: Real> {
    Gaussian(GaussianModel<T>),
    Gbrbm(GbrbmModel<T>),
    Ica(IcaModel<T>),
    DeepEbm(DeepEbmModel<T>),
}

impl<T: Real> SavedModel<T> {
    pub fn from_container(c: &Container) -> Result<Self> {
        Ok(match c.kind {
            Kind::Gaussian => SavedModel::Gaussian(GaussianModel::from_container(c)?),
            Kind::Gbrbm => SavedModel::Gbrbm(GbrbmModel::from_container(c)?),
            Kind::Ica => SavedModel::Ica(IcaModel::from_container(c)?),
            Kind::DeepEbm => SavedModel::DeepEbm(DeepEbmModel::from_container(c)?),
            Kind::Net => {
                return Err(Error::Format {
                    offset: 6,
                    message: "payload is a bare network, not a model".into(),
                })
            }
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_container(&Container::from_bytes(bytes)?)
    }

    pub fn to_container(&self) -> Container {
        match self {
            SavedModel::Gaussian(m) => m.to_container(),
            SavedModel::Gbrbm(m) => m.to_container(),
            SavedModel::Ica(m) => m.to_container(),
            SavedModel::DeepEbm(m) => m.to_container(),
        }
    }
}

impl<T: Real> ScoreModel<T> for SavedModel<T> {
    fn dim(&self) -> usize {
        match self {
            SavedModel::Gaussian(m) => m.dim(),
            SavedModel::Gbrbm(m) => m.dim(),
            SavedModel::Ica(m) => m.dim(),
            SavedModel::DeepEbm(m) => m.dim(),
        }
    }

    fn score_batch(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        match self {
            SavedModel::Gaussian(m) => m.score_batch(x),
            SavedModel::Gbrbm(m) => m.score_batch(x),
            SavedModel::Ica(m) => m.score_batch(x),
            SavedModel::DeepEbm(m) => m.score_batch(x),
        }
    }
}

impl<T: Real, M: ScoreModel<T> + ?Sized> ScoreModel<T> for &M {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn score_batch(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        (**self).score_batch(x)
    }
}

impl<T: Real> ScoreModel<T> for Box<dyn ScoreModel<T>> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn score_batch(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        (**self).score_batch(x)
    }
}
