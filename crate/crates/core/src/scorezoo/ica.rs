use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{check_len, check_rows, LogDensity, ScoreModel, SlicedScoreMatching, TrainableModel};
use crate::container::{Container, Kind};
use crate::linalg::{condition_number, Lu};
use crate::rng::{normal_matrix, rng_from_seed};
use crate::{Error, Real, Result};

/// Linear ICA with Laplace(0, 1) sources: `x = Wz`.
#[derive(Debug, Clone)]
pub struct IcaModel<T> {
    mixing: Array2<T>,
    lu: Lu<T>,
}

impl<T: Real> PartialEq for IcaModel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.mixing == other.mixing
    }
}

fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

impl<T: Real> IcaModel<T> {
    /// Fails with [`Error::Singular`] when `W` cannot be factored.
    pub fn new(mixing: Array2<T>) -> Result<Self> {
        if mixing.nrows() == 0 {
            return Err(Error::InvalidConfig("ica needs D >= 1".into()));
        }
        let lu = Lu::factor(mixing.view())?;
        Ok(IcaModel { mixing, lu })
    }

    /// Draws standard-normal matrices until the condition number is below `d`
    /// (any draw is accepted for `d = 1`).
    pub fn random(d: usize, seed: u64) -> Result<Self> {
        const MAX_DRAWS: usize = 100_000;
        let mut rng = rng_from_seed(seed);
        for _ in 0..MAX_DRAWS {
            let w: Array2<T> = normal_matrix(&mut rng, d, d);
            if d == 1 || condition_number(w.view()) < d as f64 {
                if let Ok(m) = Self::new(w) {
                    return Ok(m);
                }
            }
        }
        Err(Error::Degenerate(format!(
            "no {d}x{d} mixing matrix with condition number < {d} in {MAX_DRAWS} draws"
        )))
    }

    pub fn mixing(&self) -> &Array2<T> {
        &self.mixing
    }

    pub fn log_abs_det(&self) -> T {
        self.lu.log_abs_det()
    }

    /// Latent sources `z = W⁻¹x` for every row.
    pub fn unmix(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        check_rows(&x, self.dim(), "ica unmix")?;
        let mut z = Array2::zeros(x.raw_dim());
        for (mut zr, xr) in z.axis_iter_mut(Axis(0)).zip(x.axis_iter(Axis(0))) {
            zr.assign(&self.lu.solve(xr));
        }
        Ok(z)
    }

    fn solve_rows(&self, b: &Array2<T>, transpose: bool) -> Array2<T> {
        let mut out = Array2::zeros(b.raw_dim());
        for (mut o, r) in out.axis_iter_mut(Axis(0)).zip(b.axis_iter(Axis(0))) {
            o.assign(&if transpose { self.lu.solve_transpose(r) } else { self.lu.solve(r) });
        }
        out
    }

    /// Mean log-likelihood and its gradient in `W`:
    /// `W⁻ᵀ (mean_i sign(z_i) z_iᵀ − I)`.
    pub fn log_likelihood_grad(&self, x: ArrayView2<T>) -> Result<(T, Array2<T>)> {
        let z = self.unmix(x)?;
        let n = T::from_count(x.nrows().max(1));
        let d = self.dim();
        let value = self.mean_log_density_from_latent(&z);
        let u = z.mapv(sign);
        let m = u.t().dot(&z) / n - Array2::eye(d);
        Ok((value, self.lu.solve_transpose_columns(m.view())))
    }

    fn mean_log_density_from_latent(&self, z: &Array2<T>) -> T {
        let n = T::from_count(z.nrows().max(1));
        let ln2 = T::LN_2();
        let per_dim = -(z.mapv(|v| v.abs()).sum() / n) - T::from_count(self.dim()) * ln2;
        per_dim - self.log_abs_det()
    }

    pub fn to_container(&self) -> Container {
        let d = self.dim() as u64;
        Container::new(Kind::Ica, 0, vec![d, d], self.mixing.iter().copied())
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(Kind::Ica)?;
        if c.shape.len() != 2 || c.shape[0] != c.shape[1] {
            return Err(Error::Format {
                offset: 9,
                message: "ica header needs a square [D, D] shape".into(),
            });
        }
        let d = c.shape[0] as usize;
        c.expect_params(d * d)?;
        Self::new(Array2::from_shape_vec((d, d), c.params_as::<T>()).expect("sized"))
    }
}

impl<T: Real> ScoreModel<T> for IcaModel<T> {
    fn dim(&self) -> usize {
        self.mixing.nrows()
    }

    /// `−W⁻ᵀ sign(W⁻¹x)` with `sign(0) = 0`.
    fn score_batch(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        let u = self.unmix(x)?.mapv(sign);
        Ok(-self.solve_rows(&u, true))
    }
}

impl<T: Real> LogDensity<T> for IcaModel<T> {
    fn log_density(&self, x: ArrayView1<T>) -> Result<T> {
        check_len(&x, self.dim(), "ica log-density")?;
        let z = self.unmix(x.insert_axis(Axis(0)))?;
        Ok(self.mean_log_density_from_latent(&z))
    }

    fn log_density_batch(&self, x: ArrayView2<T>) -> Result<Array1<T>> {
        let z = self.unmix(x)?;
        let offset = T::from_count(self.dim()) * T::LN_2() + self.log_abs_det();
        Ok(z.map_axis(Axis(1), |r| -r.iter().map(|v| v.abs()).sum::<T>() - offset))
    }

    fn is_normalized(&self) -> bool {
        true
    }
}

/// Parameters are the entries of `W`, row-major. Updates refactor `W` and
/// fail with [`Error::Singular`] rather than regularizing.
impl<T: Real> TrainableModel<T> for IcaModel<T> {
    fn params(&self) -> Array1<T> {
        self.mixing.iter().copied().collect()
    }

    fn set_params(&mut self, params: ArrayView1<T>) -> Result<()> {
        let d = self.dim();
        check_len(&params, d * d, "ica parameters")?;
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                context: "ica parameters",
                index: 0,
            });
        }
        let w = params.to_owned().into_shape_with_order((d, d)).expect("sized");
        *self = Self::new(w)?;
        Ok(())
    }

    fn score_pairing_grad(&self, x: ArrayView2<T>, coef: ArrayView2<T>) -> Result<(T, Array1<T>)> {
        if coef.dim() != x.dim() {
            return Err(Error::shape("pairing coefficients", format!("{:?}", x.dim()), format!("{:?}", coef.dim())));
        }
        let n = T::from_count(x.nrows().max(1));
        // score = −W⁻ᵀu, so ⟨c, score⟩ = −(W⁻ᵀu)·c and its W-gradient is (W⁻ᵀu)(W⁻¹c)ᵀ.
        let u = self.unmix(x)?.mapv(sign);
        let back = self.solve_rows(&u, true);
        let fwd = self.solve_rows(&coef.to_owned(), false);
        let value = -(&back * &coef).sum() / n;
        let grad = back.t().dot(&fwd) / n;
        Ok((value, grad.into_iter().collect()))
    }
}

/// The score is piecewise constant, so the Hessian term vanishes and each
/// row contributes `½‖W⁻ᵀu‖²`. A latent coordinate exactly at zero sits on
/// a kink and is reported as a numeric error.
impl<T: Real> SlicedScoreMatching<T> for IcaModel<T> {
    fn sliced_sm_terms(&self, x: ArrayView2<T>, probes: ArrayView2<T>) -> Result<Array1<T>> {
        if probes.dim() != x.dim() {
            return Err(Error::shape("ssm probes", format!("{:?}", x.dim()), format!("{:?}", probes.dim())));
        }
        let g = self.kink_free_back(x)?;
        let half = T::lit(0.5);
        Ok(g.map_axis(Axis(1), |r| half * r.dot(&r)))
    }

    fn sliced_sm_grad(&self, x: ArrayView2<T>, probes: ArrayView2<T>) -> Result<(T, Array1<T>)> {
        let values = self.sliced_sm_terms(x, probes)?;
        let n = T::from_count(x.nrows().max(1));
        let g = self.kink_free_back(x)?;
        let ag = self.solve_rows(&g, false);
        let grad = -g.t().dot(&ag) / n;
        Ok((values.sum() / n, grad.into_iter().collect()))
    }
}

impl<T: Real> IcaModel<T> {
    fn kink_free_back(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        let z = self.unmix(x)?;
        for (i, row) in z.axis_iter(Axis(0)).enumerate() {
            if row.iter().any(|v| *v == T::zero() || !v.is_finite()) {
                return Err(Error::Numeric {
                    context: "ica score kink",
                    index: i,
                });
            }
        }
        Ok(self.solve_rows(&z.mapv(sign), true))
    }
}

/// ICA trained through its score pairing, with the distributional part of
/// the gradient included.
///
/// The pointwise derivative of `⟨c, −W⁻ᵀ sign(W⁻¹x)⟩` treats `sign` as
/// constant. Averaged over data, moving `W` also moves the kinks, which adds
/// `2 W⁻ᵀ (a ∘ δ(z)) zᵀ` with `a = W⁻¹c`. Here `δ` is replaced by a Gaussian
/// kernel of width `bandwidth`. The density itself is the plain Laplace ICA
/// model.
#[derive(Debug, Clone, PartialEq)]
pub struct KinkSmoothedIca<T: Real> {
    pub model: IcaModel<T>,
    pub bandwidth: T,
}

impl<T: Real> KinkSmoothedIca<T> {
    pub fn new(model: IcaModel<T>, bandwidth: T) -> Result<Self> {
        if !(bandwidth > T::zero() && bandwidth.is_finite()) {
            return Err(Error::InvalidConfig(format!("kink bandwidth must be > 0, got {bandwidth}")));
        }
        Ok(KinkSmoothedIca { model, bandwidth })
    }
}

impl<T: Real> ScoreModel<T> for KinkSmoothedIca<T> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn score_batch(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.model.score_batch(x)
    }
}

impl<T: Real> LogDensity<T> for KinkSmoothedIca<T> {
    fn log_density(&self, x: ArrayView1<T>) -> Result<T> {
        self.model.log_density(x)
    }

    fn log_density_batch(&self, x: ArrayView2<T>) -> Result<Array1<T>> {
        self.model.log_density_batch(x)
    }

    fn is_normalized(&self) -> bool {
        true
    }
}

impl<T: Real> TrainableModel<T> for KinkSmoothedIca<T> {
    fn params(&self) -> Array1<T> {
        self.model.params()
    }

    fn set_params(&mut self, params: ArrayView1<T>) -> Result<()> {
        self.model.set_params(params)
    }

    fn score_pairing_grad(&self, x: ArrayView2<T>, coef: ArrayView2<T>) -> Result<(T, Array1<T>)> {
        let (value, pointwise) = self.model.score_pairing_grad(x, coef)?;
        let m = &self.model;
        let n = T::from_count(x.nrows().max(1));
        let z = m.unmix(x)?;
        let a = m.solve_rows(&coef.to_owned(), false);
        let h = self.bandwidth;
        let norm = T::lit(2.0) / (h * T::lit((2.0 * std::f64::consts::PI).sqrt()));
        let half = T::lit(0.5);
        let weighted = Array2::from_shape_fn(z.raw_dim(), |(i, k)| {
            let r = z[[i, k]] / h;
            a[[i, k]] * norm * (-half * r * r).exp()
        });
        let back = m.solve_rows(&weighted, true);
        let kink = back.t().dot(&z) / n;
        Ok((value, pointwise + Array1::from_iter(kink)))
    }
}

#[cfg(test)]
mod tests {
    use super::super::testing::{fd_gradient, max_rel_err};
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_and_scaled_cases() {
        let m = IcaModel::<f64>::new(Array2::eye(3)).unwrap();
        let half_ln = 0.5f64.ln();
        assert!((m.log_density(array![0.0, 0.0, 0.0].view()).unwrap() - 3.0 * half_ln).abs() < 1e-14);
        assert_eq!(m.score(array![1.5, -0.2, 0.0].view()).unwrap(), array![-1.0, 1.0, 0.0]);
        assert_eq!(m.score(array![0.0, 0.0, 0.0].view()).unwrap(), array![0.0, 0.0, 0.0]);
        let s = IcaModel::<f64>::new(array![[2.0]]).unwrap();
        assert!((s.log_density(array![0.0].view()).unwrap() - (half_ln - 2f64.ln())).abs() < 1e-14);
    }

    #[test]
    fn singular_is_rejected() {
        assert!(matches!(IcaModel::<f64>::new(Array2::zeros((2, 2))), Err(Error::Singular)));
        let mut m = IcaModel::<f64>::new(Array2::eye(2)).unwrap();
        assert!(matches!(m.set_params(array![1.0, 2.0, 2.0, 4.0].view()), Err(Error::Singular)));
    }

    #[test]
    fn density_matches_dense_inverse() {
        let m = IcaModel::<f64>::random(6, 4).unwrap();
        let inv = {
            let n = nalgebra::DMatrix::from_fn(6, 6, |i, j| m.mixing()[[i, j]]);
            n.try_inverse().unwrap()
        };
        let det = nalgebra::DMatrix::from_fn(6, 6, |i, j| m.mixing()[[i, j]]).determinant();
        let x: Array2<f64> = normal_matrix(&mut rng_from_seed(5), 4, 6);
        for row in x.rows() {
            let xv = nalgebra::DVector::from_iterator(6, row.iter().copied());
            let z = &inv * xv;
            let expected: f64 = z.iter().map(|v| 0.5f64.ln() - v.abs()).sum::<f64>() - det.abs().ln();
            assert!((m.log_density(row).unwrap() - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn score_matches_finite_differences() {
        let m = IcaModel::<f64>::random(5, 11).unwrap();
        let x: Array2<f64> = normal_matrix(&mut rng_from_seed(12), 20, 5);
        let z = m.unmix(x.view()).unwrap();
        let mut checked = 0;
        for (row, zr) in x.rows().into_iter().zip(z.rows()) {
            if zr.iter().any(|v| v.abs() < 1e-3) {
                continue;
            }
            let fd = fd_gradient(|x| m.log_density(x).unwrap(), row, 1e-7);
            assert!(max_rel_err(&m.score(row).unwrap(), &fd) < 1e-5);
            checked += 1;
        }
        assert!(checked > 10);
    }

    #[test]
    fn random_generation_respects_condition_bound() {
        for d in [1, 2, 5, 10] {
            let m = IcaModel::<f64>::random(d, d as u64).unwrap();
            assert!(d == 1 || condition_number(m.mixing().view()) < d as f64);
        }
        assert_eq!(IcaModel::<f64>::random(4, 1).unwrap(), IcaModel::random(4, 1).unwrap());
    }

    fn set(m: &IcaModel<f64>, p: ArrayView1<f64>) -> IcaModel<f64> {
        let mut m = m.clone();
        m.set_params(p).unwrap();
        m
    }

    #[test]
    fn likelihood_gradient_matches_finite_differences() {
        let m = IcaModel::<f64>::random(4, 2).unwrap();
        let x: Array2<f64> = normal_matrix(&mut rng_from_seed(3), 30, 4);
        let (v, g) = m.log_likelihood_grad(x.view()).unwrap();
        assert!((v - m.mean_log_density(x.view()).unwrap()).abs() < 1e-12);
        let fd = fd_gradient(|p| set(&m, p).mean_log_density(x.view()).unwrap(), m.params().view(), 1e-7);
        let g: Array1<f64> = g.into_iter().collect();
        assert!(max_rel_err(&g, &fd) < 1e-4);
    }

    #[test]
    fn pairing_and_ssm_gradients_match_finite_differences() {
        let m = IcaModel::<f64>::random(3, 8).unwrap();
        let x: Array2<f64> = normal_matrix(&mut rng_from_seed(9), 10, 3);
        let c: Array2<f64> = normal_matrix(&mut rng_from_seed(10), 10, 3);
        let (v, g) = m.score_pairing_grad(x.view(), c.view()).unwrap();
        let direct = (&c * &m.score_batch(x.view()).unwrap()).sum() / 10.0;
        assert!((v - direct).abs() < 1e-12);
        let fd = fd_gradient(
            |p| set(&m, p).score_pairing_grad(x.view(), c.view()).unwrap().0,
            m.params().view(),
            1e-7,
        );
        assert!(max_rel_err(&g, &fd) < 1e-5);

        let (v, g) = m.sliced_sm_grad(x.view(), c.view()).unwrap();
        let s = m.score_batch(x.view()).unwrap();
        assert!((v - 0.5 * (&s * &s).sum() / 10.0).abs() < 1e-12);
        let fd = fd_gradient(
            |p| set(&m, p).sliced_sm_grad(x.view(), c.view()).unwrap().0,
            m.params().view(),
            1e-7,
        );
        assert!(max_rel_err(&g, &fd) < 1e-5);
    }

    #[test]
    fn ssm_at_kink_reports_row() {
        let m = IcaModel::<f64>::new(Array2::eye(2)).unwrap();
        let x = array![[1.0, 1.0], [0.5, 0.0]];
        match m.sliced_sm_terms(x.view(), x.view()) {
            Err(Error::Numeric { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn kink_bandwidth_must_be_positive() {
        let m = IcaModel::<f64>::random(2, 1).unwrap();
        for h in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(KinkSmoothedIca::new(m.clone(), h), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn kink_gradient_tracks_the_sample_average() {
        // Constant coefficients make the pointwise pairing piecewise constant
        // in sign(z), so only the kink term sees the averaged slope.
        let m = IcaModel::<f64>::random(2, 5).unwrap();
        let n = 200_000;
        let x: Array2<f64> = normal_matrix(&mut rng_from_seed(6), n, 2) + array![0.7, -0.4];
        let c = Array2::from_shape_fn((n, 2), |(_, k)| [1.0, -0.5][k]);
        let smoothed = KinkSmoothedIca::new(m.clone(), 0.02).unwrap();
        let (_, g) = smoothed.score_pairing_grad(x.view(), c.view()).unwrap();
        let (_, pointwise) = m.score_pairing_grad(x.view(), c.view()).unwrap();
        let fd = fd_gradient(
            |p| set(&m, p).score_pairing_grad(x.view(), c.view()).unwrap().0,
            m.params().view(),
            0.02,
        );
        let err = |v: &Array1<f64>| (v - &fd).mapv(f64::abs).sum() / fd.mapv(f64::abs).sum();
        assert!(err(&g) < 0.05, "smoothed {g} vs fd {fd}");
        assert!(err(&pointwise) > 0.3, "pointwise {pointwise} vs fd {fd}");
    }

    #[test]
    fn round_trip() {
        let m = IcaModel::<f64>::random(3, 1).unwrap();
        assert_eq!(IcaModel::<f64>::from_container(&m.to_container()).unwrap(), m);
    }
}
