use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use super::{check_len, check_rows, LogDensity, ScoreModel, SlicedScoreMatching, TrainableModel};
use crate::container::{Container, Kind};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Variance<T> {
    Isotropic(T),
    Diagonal(Array1<T>),
}

/// `N(mean, diag(variance))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel<T> {
    mean: Array1<T>,
    variance: Variance<T>,
}

impl<T: Real> GaussianModel<T> {
    pub fn new(mean: Array1<T>, variance: Variance<T>) -> Result<Self> {
        match &variance {
            Variance::Isotropic(v) if !(*v > T::zero() && v.is_finite()) => {
                return Err(Error::InvalidConfig(format!("variance must be positive, got {v}")))
            }
            Variance::Diagonal(v) => {
                check_len(&v.view(), mean.len(), "gaussian variance")?;
                if v.iter().any(|v| !(*v > T::zero() && v.is_finite())) {
                    return Err(Error::InvalidConfig("variance entries must be positive".into()));
                }
            }
            _ => {}
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Numeric {
                context: "gaussian mean",
                index: 0,
            });
        }
        Ok(GaussianModel { mean, variance })
    }

    pub fn isotropic(mean: Array1<T>, variance: T) -> Result<Self> {
        Self::new(mean, Variance::Isotropic(variance))
    }

    pub fn diagonal(mean: Array1<T>, variance: Array1<T>) -> Result<Self> {
        Self::new(mean, Variance::Diagonal(variance))
    }

    pub fn standard(d: usize) -> Self {
        GaussianModel {
            mean: Array1::zeros(d),
            variance: Variance::Isotropic(T::one()),
        }
    }

    pub fn mean(&self) -> &Array1<T> {
        &self.mean
    }

    pub fn variance(&self) -> &Variance<T> {
        &self.variance
    }

    /// Per-coordinate variances.
    pub fn variances(&self) -> Array1<T> {
        match &self.variance {
            Variance::Isotropic(v) => Array1::from_elem(self.mean.len(), *v),
            Variance::Diagonal(v) => v.clone(),
        }
    }

    pub fn to_container(&self) -> Container {
        let (tag, var) = match &self.variance {
            Variance::Isotropic(v) => (0u64, vec![*v]),
            Variance::Diagonal(v) => (1u64, v.to_vec()),
        };
        Container::new(
            Kind::Gaussian,
            0,
            vec![self.mean.len() as u64, tag],
            self.mean.iter().copied().chain(var),
        )
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(Kind::Gaussian)?;
        if c.shape.len() != 2 {
            return Err(Error::Format {
                offset: 9,
                message: "gaussian header needs [dim, variance kind]".into(),
            });
        }
        let d = c.shape[0] as usize;
        let p = c.params_as::<T>();
        match c.shape[1] {
            0 => {
                c.expect_params(d + 1)?;
                Self::isotropic(Array1::from(p[..d].to_vec()), p[d])
            }
            1 => {
                c.expect_params(2 * d)?;
                Self::diagonal(Array1::from(p[..d].to_vec()), Array1::from(p[d..].to_vec()))
            }
            k => Err(Error::Format {
                offset: 9,
                message: format!("unknown variance kind {k}"),
            }),
        }
    }
}

impl<T: Real> ScoreModel<T> for GaussianModel<T> {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn score_batch(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        check_rows(&x, self.dim(), "gaussian score")?;
        let inv = self.variances().mapv(|v| -T::one() / v);
        Ok((&x - &self.mean) * &inv)
    }
}

impl<T: Real> LogDensity<T> for GaussianModel<T> {
    fn log_density(&self, x: ArrayView1<T>) -> Result<T> {
        check_len(&x, self.dim(), "gaussian log-density")?;
        let two_pi = T::lit(2.0) * T::PI();
        let half = T::lit(0.5);
        Ok(Zip::from(&x)
            .and(&self.mean)
            .and(&self.variances())
            .fold(T::zero(), |acc, &xi, &m, &v| {
                acc - half * ((xi - m) * (xi - m) / v + (two_pi * v).ln())
            }))
    }

    fn is_normalized(&self) -> bool {
        true
    }
}

/// Parameters are the mean followed by log-variance (one entry when isotropic).
impl<T: Real> TrainableModel<T> for GaussianModel<T> {
    fn params(&self) -> Array1<T> {
        let logvar: Vec<T> = match &self.variance {
            Variance::Isotropic(v) => vec![v.ln()],
            Variance::Diagonal(v) => v.iter().map(|v| v.ln()).collect(),
        };
        self.mean.iter().copied().chain(logvar).collect()
    }

    fn set_params(&mut self, params: ArrayView1<T>) -> Result<()> {
        let d = self.dim();
        let expected = match self.variance {
            Variance::Isotropic(_) => d + 1,
            Variance::Diagonal(_) => 2 * d,
        };
        check_len(&params, expected, "gaussian parameters")?;
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                context: "gaussian parameters",
                index: 0,
            });
        }
        self.mean.assign(&params.slice(ndarray::s![..d]));
        self.variance = match self.variance {
            Variance::Isotropic(_) => Variance::Isotropic(params[d].exp()),
            Variance::Diagonal(_) => Variance::Diagonal(params.slice(ndarray::s![d..]).mapv(|v| v.exp())),
        };
        Ok(())
    }

    fn score_pairing_grad(&self, x: ArrayView2<T>, coef: ArrayView2<T>) -> Result<(T, Array1<T>)> {
        check_rows(&x, self.dim(), "gaussian pairing")?;
        if coef.dim() != x.dim() {
            return Err(Error::shape("pairing coefficients", format!("{:?}", x.dim()), format!("{:?}", coef.dim())));
        }
        let n = T::from_count(x.nrows().max(1));
        let inv = self.variances().mapv(|v| T::one() / v);
        let centered = &x - &self.mean;
        // ⟨c, -(x - m)/v⟩
        let value = -(&coef * &centered * &inv).sum() / n;
        let grad_mean = (&coef * &inv).sum_axis(Axis(0)) / n;
        let grad_logvar_full = (&coef * &centered * &inv).sum_axis(Axis(0)) / n;
        let grad_logvar: Vec<T> = match self.variance {
            Variance::Isotropic(_) => vec![grad_logvar_full.sum()],
            Variance::Diagonal(_) => grad_logvar_full.to_vec(),
        };
        Ok((value, grad_mean.iter().copied().chain(grad_logvar).collect()))
    }
}

impl<T: Real> SlicedScoreMatching<T> for GaussianModel<T> {
    fn sliced_sm_terms(&self, x: ArrayView2<T>, probes: ArrayView2<T>) -> Result<Array1<T>> {
        if probes.dim() != x.dim() {
            return Err(Error::shape("ssm probes", format!("{:?}", x.dim()), format!("{:?}", probes.dim())));
        }
        let s = self.score_batch(x)?;
        let inv = self.variances().mapv(|v| T::one() / v);
        let half = T::lit(0.5);
        let quad = (&probes * &probes * &inv).sum_axis(Axis(1));
        Ok((&s * &s).sum_axis(Axis(1)) * half - quad)
    }

    fn sliced_sm_grad(&self, x: ArrayView2<T>, probes: ArrayView2<T>) -> Result<(T, Array1<T>)> {
        let values = self.sliced_sm_terms(x, probes)?;
        let n = T::from_count(x.nrows().max(1));
        let inv = self.variances().mapv(|v| T::one() / v);
        let centered = &x - &self.mean;
        // per row: ½Σ(x−m)²/v² − Σε²/v
        let grad_mean = -(&centered * &inv * &inv).sum_axis(Axis(0)) / n;
        let sq = &centered * &centered * &inv * &inv;
        let pq = &probes * &probes * &inv;
        let grad_logvar_full = (pq - sq).sum_axis(Axis(0)) / n;
        let grad_logvar: Vec<T> = match self.variance {
            Variance::Isotropic(_) => vec![grad_logvar_full.sum()],
            Variance::Diagonal(_) => grad_logvar_full.to_vec(),
        };
        Ok((values.sum() / n, grad_mean.iter().copied().chain(grad_logvar).collect()))
    }
}
