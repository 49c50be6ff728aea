use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{check_len, check_rows, LogDensity, ScoreModel, SlicedScoreMatching, TrainableModel};
use crate::container::{Container, Kind};
use crate::diffnet::{MlpNet, ParamVector};
use crate::{Error, Real, Result};

/// `q(x) ∝ exp(−E(x)) · N(x; μ, diag(exp(logvar)))` with `E` an MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepEbmModel<T> {
    energy: MlpNet<T>,
    envelope_mean: Array1<T>,
    envelope_logvar: Array1<T>,
}

impl<T: Real> DeepEbmModel<T> {
    pub fn new(energy: MlpNet<T>, envelope_mean: Array1<T>, envelope_logvar: Array1<T>) -> Result<Self> {
        if energy.d_out() != 1 {
            return Err(Error::shape("energy net output", 1, energy.d_out()));
        }
        let d = energy.d_in();
        check_len(&envelope_mean.view(), d, "envelope mean")?;
        check_len(&envelope_logvar.view(), d, "envelope log-variance")?;
        if envelope_mean.iter().chain(&envelope_logvar).any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                context: "envelope parameters",
                index: 0,
            });
        }
        Ok(DeepEbmModel {
            energy,
            envelope_mean,
            envelope_logvar,
        })
    }

    /// Standard-normal envelope around the given energy net.
    pub fn with_standard_envelope(energy: MlpNet<T>) -> Result<Self> {
        let d = energy.d_in();
        Self::new(energy, Array1::zeros(d), Array1::zeros(d))
    }

    pub fn energy(&self) -> &MlpNet<T> {
        &self.energy
    }

    pub fn envelope_mean(&self) -> &Array1<T> {
        &self.envelope_mean
    }

    pub fn envelope_logvar(&self) -> &Array1<T> {
        &self.envelope_logvar
    }

    fn inv_var(&self) -> Array1<T> {
        self.envelope_logvar.mapv(|v| (-v).exp())
    }

    pub fn to_container(&self) -> Container {
        let net = self.energy.to_container();
        Container::new(
            Kind::DeepEbm,
            net.activation,
            net.shape,
            net.params
                .into_iter()
                .map(T::lit)
                .chain(self.envelope_mean.iter().copied())
                .chain(self.envelope_logvar.iter().copied()),
        )
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(Kind::DeepEbm)?;
        let d = c.shape.first().copied().unwrap_or(0) as usize;
        let net_params = c.params.len().checked_sub(2 * d).ok_or(Error::Format {
            offset: 0,
            message: "deep EBM payload shorter than its envelope".into(),
        })?;
        let net = MlpNet::from_container(&Container {
            kind: Kind::Net,
            scalar_width: c.scalar_width,
            activation: c.activation,
            shape: c.shape.clone(),
            params: c.params[..net_params].to_vec(),
        })?;
        let p = c.params_as::<T>();
        Self::new(
            net,
            Array1::from(p[net_params..net_params + d].to_vec()),
            Array1::from(p[net_params + d..].to_vec()),
        )
    }
}

impl<T: Real> ScoreModel<T> for DeepEbmModel<T> {
    fn dim(&self) -> usize {
        self.energy.d_in()
    }

    fn score_batch(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        check_rows(&x, self.dim(), "deep EBM score")?;
        let (_, grad) = self.energy.energy_grad_batch(x)?;
        Ok(-grad - (&x - &self.envelope_mean) * &self.inv_var())
    }
}

impl<T: Real> LogDensity<T> for DeepEbmModel<T> {
    fn log_density(&self, x: ArrayView1<T>) -> Result<T> {
        Ok(self.log_density_batch(x.insert_axis(Axis(0)))?[0])
    }

    fn log_density_batch(&self, x: ArrayView2<T>) -> Result<Array1<T>> {
        check_rows(&x, self.dim(), "deep EBM log-density")?;
        let e = self.energy.forward_batch(x)?.column(0).to_owned();
        let half = T::lit(0.5);
        let log_norm = half * (self.envelope_logvar.sum() + T::from_count(self.dim()) * (T::lit(2.0) * T::PI()).ln());
        let centered = &x - &self.envelope_mean;
        let quad = (&centered * &centered * &self.inv_var()).sum_axis(Axis(1));
        Ok(-e - quad * half - log_norm)
    }

    fn is_normalized(&self) -> bool {
        false
    }
}

/// Parameters: energy-net parameters, then envelope mean, then envelope log-variance.
impl<T: Real> TrainableModel<T> for DeepEbmModel<T> {
    fn params(&self) -> Array1<T> {
        self.energy
            .to_params()
            .0
            .iter()
            .chain(&self.envelope_mean)
            .chain(&self.envelope_logvar)
            .copied()
            .collect()
    }

    fn set_params(&mut self, params: ArrayView1<T>) -> Result<()> {
        let k = self.energy.num_params();
        let d = self.dim();
        check_len(&params, k + 2 * d, "deep EBM parameters")?;
        if let Some(i) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                context: "deep EBM parameters",
                index: i,
            });
        }
        self.energy.set_params(&ParamVector(params.slice(s![..k]).to_owned()))?;
        self.envelope_mean.assign(&params.slice(s![k..k + d]));
        self.envelope_logvar.assign(&params.slice(s![k + d..]));
        Ok(())
    }

    fn score_pairing_grad(&self, x: ArrayView2<T>, coef: ArrayView2<T>) -> Result<(T, Array1<T>)> {
        check_rows(&x, self.dim(), "deep EBM pairing")?;
        if coef.dim() != x.dim() {
            return Err(Error::shape("pairing coefficients", format!("{:?}", x.dim()), format!("{:?}", coef.dim())));
        }
        let rows = x.nrows().max(1);
        let n = T::from_count(rows);
        let weight = Array1::from_elem(x.nrows(), T::one() / n);
        let pair = self.energy.energy_pair_grad_batch(x, coef, weight.view())?;
        let inv = self.inv_var();
        let centered = &x - &self.envelope_mean;
        let env = &coef * &centered * &inv;
        let value = -((&coef * &pair.grad_x).sum() + env.sum()) / n;
        let grad_mean = (&coef * &inv).sum_axis(Axis(0)) / n;
        let grad_logvar = env.sum_axis(Axis(0)) / n;
        let grad = pair
            .param_grad
            .0
            .iter()
            .map(|&g| -g)
            .chain(grad_mean)
            .chain(grad_logvar)
            .collect();
        Ok((value, grad))
    }
}

/// The Hessian term comes from a forward-over-reverse product. The parameter
/// gradient would need third derivatives of the energy net, so it is not offered.
impl<T: Real> SlicedScoreMatching<T> for DeepEbmModel<T> {
    fn sliced_sm_terms(&self, x: ArrayView2<T>, probes: ArrayView2<T>) -> Result<Array1<T>> {
        check_rows(&x, self.dim(), "deep EBM ssm")?;
        if probes.dim() != x.dim() {
            return Err(Error::shape("ssm probes", format!("{:?}", x.dim()), format!("{:?}", probes.dim())));
        }
        let (grad, hvp) = self.energy.energy_hvp_batch(x, probes)?;
        let inv = self.inv_var();
        let score = -grad - (&x - &self.envelope_mean) * &inv;
        let half = T::lit(0.5);
        let hess = (&probes * &hvp).sum_axis(Axis(1)) + (&probes * &probes * &inv).sum_axis(Axis(1));
        let out = (&score * &score).sum_axis(Axis(1)) * half - hess;
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                context: "deep EBM ssm",
                index: i,
            });
        }
        Ok(out)
    }

    fn sliced_sm_grad(&self, _x: ArrayView2<T>, _probes: ArrayView2<T>) -> Result<(T, Array1<T>)> {
        Err(Error::Unsupported(
            "sliced score matching gradients for deep EBMs need third-order derivatives".into(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::super::testing::{fd_gradient, max_rel_err};
    use super::*;
    use crate::diffnet::Activation;
    use crate::rng::{normal_matrix, rng_from_seed};
    use ndarray::array;

    fn model(seed: u64) -> DeepEbmModel<f64> {
        let net = MlpNet::init(&[3, 5, 4, 1], Activation::Swish, seed).unwrap();
        DeepEbmModel::new(net, array![0.2, -0.1, 0.4], array![0.3, -0.2, 0.1]).unwrap()
    }

    #[test]
    fn zero_energy_is_gaussian() {
        let net = MlpNet::<f64>::zeros(&[2, 4, 1], Activation::Swish).unwrap();
        let m = DeepEbmModel::new(net, array![1.0, -1.0], array![0.0, 2f64.ln()]).unwrap();
        let x = array![0.0, 0.0];
        assert_eq!(m.score(x.view()).unwrap(), array![1.0, -0.5]);
        assert_eq!(m.score(array![1.0, -1.0].view()).unwrap(), array![0.0, 0.0]);
    }

    #[test]
    fn score_matches_log_density_gradient() {
        let m = model(1);
        let x: Array2<f64> = normal_matrix(&mut rng_from_seed(2), 4, 3);
        for row in x.rows() {
            let fd = fd_gradient(|x| m.log_density(x).unwrap(), row, 1e-5);
            assert!(max_rel_err(&m.score(row).unwrap(), &fd) < 1e-5);
        }
    }

    #[test]
    fn pairing_gradient_matches_finite_differences() {
        let m = model(3);
        let x: Array2<f64> = normal_matrix(&mut rng_from_seed(4), 5, 3);
        let c: Array2<f64> = normal_matrix(&mut rng_from_seed(5), 5, 3);
        let (v, g) = m.score_pairing_grad(x.view(), c.view()).unwrap();
        let direct = (&c * &m.score_batch(x.view()).unwrap()).sum() / 5.0;
        assert!((v - direct).abs() < 1e-12);
        let fd = fd_gradient(
            |p| {
                let mut mm = m.clone();
                mm.set_params(p).unwrap();
                mm.score_pairing_grad(x.view(), c.view()).unwrap().0
            },
            m.params().view(),
            1e-6,
        );
        assert!(max_rel_err(&g, &fd) < 1e-4);
    }

    #[test]
    fn ssm_terms_match_finite_difference_hessian() {
        let m = model(6);
        let x: Array2<f64> = normal_matrix(&mut rng_from_seed(7), 3, 3);
        let e: Array2<f64> = normal_matrix(&mut rng_from_seed(8), 3, 3);
        let t = m.sliced_sm_terms(x.view(), e.view()).unwrap();
        let h = 1e-5;
        for i in 0..3 {
            let (xr, er) = (x.row(i), e.row(i));
            let s = m.score(xr).unwrap();
            let sp = m.score((&xr + &(&er * h)).view()).unwrap();
            let sm = m.score((&xr - &(&er * h)).view()).unwrap();
            let dir = er.dot(&((sp - sm) / (2.0 * h)));
            let expected = 0.5 * s.dot(&s) + dir;
            assert!((t[i] - expected).abs() < 1e-6 * expected.abs().max(1.0));
        }
        assert!(matches!(m.sliced_sm_grad(x.view(), e.view()), Err(Error::Unsupported(_))));
    }

    #[test]
    fn round_trip() {
        let m = model(9);
        assert_eq!(DeepEbmModel::<f64>::from_container(&m.to_container()).unwrap(), m);
        let saved = super::super::SavedModel::<f64>::from_bytes(&m.to_container().to_bytes()).unwrap();
        assert_eq!(saved.dim(), 3);
    }
}
