use ndarray::{Array1, Array2, ArrayView2};

use super::Critic;
use crate::scorezoo::{GaussianModel, ScoreModel};
use crate::{Error, Real, Result};

/// The optimal regularized critic between Gaussians,
/// `f*(x) = (∇log q(x) − ∇log p(x)) / (2λ)`.
///
/// For diagonal Gaussians the score difference is affine per coordinate:
/// `δ_i(x) = slope_i · x_i + offset_i`.
#[derive(Debug, Clone)]
pub struct OptimalGaussianCritic<T> {
    slope: Array1<T>,
    offset: Array1<T>,
    lambda: T,
}

impl<T: Real> OptimalGaussianCritic<T> {
    pub fn new(p: &GaussianModel<T>, q: &GaussianModel<T>, lambda: T) -> Result<Self> {
        if p.dim() != q.dim() {
            return Err(Error::shape("gaussian oracle", p.dim(), q.dim()));
        }
        if !(lambda > T::zero()) {
            return Err(Error::InvalidConfig(format!("oracle needs lambda > 0, got {lambda}")));
        }
        let (vp, vq) = (p.variances(), q.variances());
        let slope = vp.mapv(|v| T::one() / v) - vq.mapv(|v| T::one() / v);
        let offset = q.mean() / &vq - p.mean() / &vp;
        Ok(OptimalGaussianCritic { slope, offset, lambda })
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    fn scale(&self) -> T {
        T::one() / (T::lit(2.0) * self.lambda)
    }
}

impl<T: Real> Critic<T> for OptimalGaussianCritic<T> {
    fn dim(&self) -> usize {
        self.slope.len()
    }

    fn eval_batch(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        if x.ncols() != self.dim() {
            return Err(Error::shape("optimal critic input", self.dim(), x.ncols()));
        }
        Ok((&x * &self.slope + &self.offset) * self.scale())
    }

    fn eval_with_trace(&self, x: ArrayView2<T>) -> Result<(Array2<T>, Array1<T>)> {
        let f = self.eval_batch(x)?;
        let tr = self.slope.sum() * self.scale();
        Ok((f, Array1::from_elem(x.nrows(), tr)))
    }

    fn eval_with_jvp(&self, x: ArrayView2<T>, v: ArrayView2<T>) -> Result<(Array2<T>, Array2<T>)> {
        let f = self.eval_batch(x)?;
        Ok((f, &v * &self.slope * self.scale()))
    }
}

/// Closed-form `(1/(4λ)) E_p‖∇log q − ∇log p‖²` for diagonal Gaussians, the
/// regularized discrepancy attained by [`OptimalGaussianCritic`].
pub fn gaussian_sd_oracle<T: Real>(p: &GaussianModel<T>, q: &GaussianModel<T>, lambda: T) -> Result<T> {
    let c = OptimalGaussianCritic::new(p, q, lambda)?;
    let vp = p.variances();
    // δ_i(x) with x_i ~ N(m_i, v_i): E δ_i² = (slope_i m_i + offset_i)² + slope_i² v_i
    let mean_sq: T = (0..c.dim())
        .map(|i| {
            let m = c.slope[i] * p.mean()[i] + c.offset[i];
            m * m + c.slope[i] * c.slope[i] * vp[i]
        })
        .sum();
    Ok(mean_sq / (T::lit(4.0) * lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discrepancy::{lsd_estimate, regularizer, stein_terms_exact, stein_terms_hutchinson};
    use crate::rng::{normal_matrix, rng_from_seed};
    use ndarray::array;

    #[test]
    fn identical_models_have_zero_oracle() {
        let p = GaussianModel::diagonal(array![0.1, 0.2], array![1.5, 0.5]).unwrap();
        assert_eq!(gaussian_sd_oracle(&p, &p, 0.5).unwrap(), 0.0);
        assert!(gaussian_sd_oracle(&p, &p, 0.0).is_err());
    }

    #[test]
    fn mean_shift_oracle_and_monte_carlo() {
        let d = 100;
        let p = GaussianModel::<f64>::standard(d);
        let q = GaussianModel::isotropic(Array1::from_elem(d, 0.5), 1.0).unwrap();
        let oracle = gaussian_sd_oracle(&p, &q, 0.5).unwrap();
        assert!((oracle - 12.5).abs() < 1e-12);

        let critic = OptimalGaussianCritic::new(&p, &q, 0.5).unwrap();
        let n = 100_000;
        let x: Array2<f64> = normal_matrix(&mut rng_from_seed(1), n, d);
        let terms = stein_terms_exact(&critic, &q, x.view()).unwrap();
        let est = lsd_estimate(&terms).unwrap();
        // unregularized pairing with f* is ‖μ‖²/(2λ)
        assert!((est.mean - 25.0).abs() < 4.0 * est.standard_error(), "{est:?}");
        let reg = regularizer(&critic, x.view(), 0.5).unwrap();
        assert!((est.mean - reg - oracle).abs() < 0.1, "{}", est.mean - reg);
        let h = lsd_estimate(&stein_terms_hutchinson(&critic, &q, x.view(), 2).unwrap()).unwrap();
        assert!((h.mean - 25.0).abs() < 4.0 * h.standard_error());
    }

    #[test]
    fn variance_mismatch_matches_monte_carlo() {
        let s2 = 2.0f64;
        let p = GaussianModel::<f64>::standard(1);
        let q = GaussianModel::isotropic(array![0.0], s2).unwrap();
        let oracle = gaussian_sd_oracle(&p, &q, 0.5).unwrap();
        let x: Array2<f64> = normal_matrix(&mut rng_from_seed(3), 1_000_000, 1);
        let mc = x.iter().map(|&x| 0.5 * (x / s2 - x).powi(2)).sum::<f64>() / 1e6;
        assert!((oracle - mc).abs() < 0.01 * oracle, "{oracle} vs {mc}");
    }
}
