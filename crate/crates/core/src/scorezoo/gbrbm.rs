use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::{check_len, check_rows, LogDensity, ScoreModel};
use crate::container::{Container, Kind};
use crate::rng::{normal, rng_from_seed};
use crate::{Error, Real, Result};

/// Gaussian-Bernoulli RBM with hidden units in `{-1, +1}`:
/// `p(x, h) ∝ exp(xᵀBh + bᵀx + cᵀh − ½‖x‖²)`.
///
/// Summing out `h` gives `log p(x) = bᵀx − ½‖x‖² + Σ_j log 2cosh((Bᵀx + c)_j) + const`,
/// whose gradient is `b − x + B tanh(Bᵀx + c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GbrbmModel<T> {
    b_mat: Array2<T>,
    b_vis: Array1<T>,
    c_hid: Array1<T>,
}

/// `log(2 cosh a)` without overflow.
pub(crate) fn log_2cosh<T: Real>(a: T) -> T {
    let m = a.abs();
    m + (-(m + m)).exp().ln_1p()
}

impl<T: Real> GbrbmModel<T> {
    /// `weights` is `d_x × d_h`, `visible_bias` has `d_x` entries, `hidden_bias` `d_h`.
    pub fn new(weights: Array2<T>, visible_bias: Array1<T>, hidden_bias: Array1<T>) -> Result<Self> {
        let (dx, dh) = weights.dim();
        if visible_bias.len() != dx || hidden_bias.len() != dh {
            return Err(Error::shape(
                "gbrbm biases",
                format!("({dx}, {dh})"),
                format!("({}, {})", visible_bias.len(), hidden_bias.len()),
            ));
        }
        if dx == 0 || dh == 0 {
            return Err(Error::InvalidConfig("gbrbm needs at least one visible and one hidden unit".into()));
        }
        let finite = weights.iter().chain(&visible_bias).chain(&hidden_bias).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Numeric {
                context: "gbrbm parameters",
                index: 0,
            });
        }
        Ok(GbrbmModel {
            b_mat: weights,
            b_vis: visible_bias,
            c_hid: hidden_bias,
        })
    }

    /// Weights uniform on `{-1, +1}`, biases standard normal.
    pub fn random(d_x: usize, d_h: usize, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(seed);
        let weights = Array2::from_shape_simple_fn((d_x, d_h), || {
            if rng.random::<bool>() {
                T::one()
            } else {
                -T::one()
            }
        });
        let b = Array1::from_shape_simple_fn(d_x, || normal(&mut rng));
        let c = Array1::from_shape_simple_fn(d_h, || normal(&mut rng));
        Self::new(weights, b, c)
    }

    pub fn d_x(&self) -> usize {
        self.b_mat.nrows()
    }

    pub fn d_h(&self) -> usize {
        self.b_mat.ncols()
    }

    pub fn weights(&self) -> &Array2<T> {
        &self.b_mat
    }

    pub fn visible_bias(&self) -> &Array1<T> {
        &self.b_vis
    }

    pub fn hidden_bias(&self) -> &Array1<T> {
        &self.c_hid
    }

    /// `Bᵀx + c` for every row of `x`, as an `n × d_h` matrix.
    pub fn hidden_preactivation(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        check_rows(&x, self.d_x(), "gbrbm hidden pre-activation")?;
        Ok(x.dot(&self.b_mat) + &self.c_hid)
    }

    /// Mean of `x | h`, i.e. `b + Bh` per row of `h` (`n × d_h`).
    pub fn visible_mean(&self, h: ArrayView2<T>) -> Result<Array2<T>> {
        if h.ncols() != self.d_h() {
            return Err(Error::shape("gbrbm visible mean", self.d_h(), h.ncols()));
        }
        Ok(h.dot(&self.b_mat.t()) + &self.b_vis)
    }

    /// Adds i.i.d. `N(0, sigma²)` noise to the weights only; biases are kept.
    pub fn perturb(&self, sigma: T, seed: u64) -> Result<Self> {
        if !(sigma >= T::zero()) || !sigma.is_finite() {
            return Err(Error::InvalidConfig(format!("perturbation sigma must be >= 0, got {sigma}")));
        }
        let mut rng = rng_from_seed(seed);
        let mut out = self.clone();
        if sigma > T::zero() {
            out.b_mat.mapv_inplace(|w| w + sigma * normal::<T, _>(&mut rng));
        }
        Ok(out)
    }

    pub fn to_container(&self) -> Container {
        Container::new(
            Kind::Gbrbm,
            0,
            vec![self.d_x() as u64, self.d_h() as u64],
            self.b_mat.iter().chain(&self.b_vis).chain(&self.c_hid).copied(),
        )
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(Kind::Gbrbm)?;
        if c.shape.len() != 2 {
            return Err(Error::Format {
                offset: 9,
                message: "gbrbm header needs [d_x, d_h]".into(),
            });
        }
        let (dx, dh) = (c.shape[0] as usize, c.shape[1] as usize);
        c.expect_params(dx * dh + dx + dh)?;
        let p = c.params_as::<T>();
        let weights = Array2::from_shape_vec((dx, dh), p[..dx * dh].to_vec()).expect("sized");
        let b = Array1::from(p[dx * dh..dx * dh + dx].to_vec());
        let h = Array1::from(p[dx * dh + dx..].to_vec());
        Self::new(weights, b, h)
    }
}

/// Free-function form of [`GbrbmModel::perturb`].
pub fn perturb_rbm<T: Real>(model: &GbrbmModel<T>, sigma: T, seed: u64) -> Result<GbrbmModel<T>> {
    model.perturb(sigma, seed)
}

impl<T: Real> ScoreModel<T> for GbrbmModel<T> {
    fn dim(&self) -> usize {
        self.d_x()
    }

    fn score_batch(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        let a = self.hidden_preactivation(x)?.mapv(|v| v.tanh());
        Ok(a.dot(&self.b_mat.t()) + &self.b_vis - x)
    }
}

impl<T: Real> LogDensity<T> for GbrbmModel<T> {
    fn log_density(&self, x: ArrayView1<T>) -> Result<T> {
        check_len(&x, self.d_x(), "gbrbm log-density")?;
        Ok(self.log_density_batch(x.insert_axis(Axis(0)))?[0])
    }

    fn log_density_batch(&self, x: ArrayView2<T>) -> Result<Array1<T>> {
        let a = self.hidden_preactivation(x)?;
        let half = T::lit(0.5);
        let visible = x.dot(&self.b_vis) - x.map_axis(Axis(1), |r| half * r.dot(&r));
        Ok(visible + a.map_axis(Axis(1), |r| r.iter().map(|&v| log_2cosh(v)).sum::<T>()))
    }

    fn is_normalized(&self) -> bool {
        false
    }
}
