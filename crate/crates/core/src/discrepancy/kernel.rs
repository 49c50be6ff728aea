use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{power_objective_grad, DiscrepancyEstimate};
use crate::scorezoo::ScoreModel;
use crate::{Error, Real, Result};

/// `k(x, x') = exp(−‖x − x'‖² / (2h²))`, stored through `log h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbfKernel<T> {
    log_bandwidth: T,
}

/// Which statistic the bandwidth is tuned to maximize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KsdObjective {
    /// The U-statistic itself.
    #[default]
    Mean,
    /// Mean over standard deviation of the pair terms.
    Power,
}

/// Stein kernel `u(x_i, x_j)` for every ordered pair, and optionally its
/// derivative in `log h`.
#[derive(Debug, Clone)]
pub struct SteinKernelMatrix<T> {
    pub u: Array2<T>,
    pub d_log_bandwidth: Option<Array2<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MedianBandwidth<T> {
    pub value: T,
    /// Set when the median distance is zero (e.g. duplicated rows).
    pub degenerate: bool,
}

const MEDIAN_SUBSAMPLE: usize = 1000;

/// Median pairwise Euclidean distance over the first (at most) 1000 rows.
pub fn median_bandwidth<T: Real>(x: ArrayView2<T>) -> MedianBandwidth<T> {
    let m = x.nrows().min(MEDIAN_SUBSAMPLE);
    let mut dist = Vec::with_capacity(m * m.saturating_sub(1) / 2);
    for i in 0..m {
        for j in (i + 1)..m {
            let r2: T = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (*a - *b) * (*a - *b)).sum();
            dist.push(r2.sqrt());
        }
    }
    if dist.is_empty() {
        return MedianBandwidth {
            value: T::zero(),
            degenerate: true,
        };
    }
    dist.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let k = dist.len();
    let value = if k % 2 == 1 {
        dist[k / 2]
    } else {
        (dist[k / 2 - 1] + dist[k / 2]) * T::lit(0.5)
    };
    MedianBandwidth {
        value,
        degenerate: !(value > T::zero() && value.is_finite()),
    }
}

impl<T: Real> RbfKernel<T> {
    pub fn new(bandwidth: T) -> Result<Self> {
        if !(bandwidth > T::zero() && bandwidth.is_finite()) {
            return Err(Error::InvalidConfig(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(RbfKernel {
            log_bandwidth: bandwidth.ln(),
        })
    }

    /// Kernel at the median-distance heuristic; degenerate samples are an error.
    pub fn median_heuristic(x: ArrayView2<T>) -> Result<Self> {
        let med = median_bandwidth(x);
        if med.degenerate {
            return Err(Error::Degenerate("median pairwise distance is zero".into()));
        }
        Self::new(med.value)
    }

    pub fn bandwidth(&self) -> T {
        self.log_bandwidth.exp()
    }

    pub fn log_bandwidth(&self) -> T {
        self.log_bandwidth
    }

    pub fn set_log_bandwidth(&mut self, v: T) -> Result<()> {
        if !v.is_finite() {
            return Err(Error::Numeric {
                context: "log bandwidth",
                index: 0,
            });
        }
        self.log_bandwidth = v;
        Ok(())
    }

    /// `u(x, x') = k [sᵀs' + sᵀΔ/h² − s'ᵀΔ/h² + d/h² − ‖Δ‖²/h⁴]` with `Δ = x − x'`.
    pub fn stein_matrix(&self, scores: ArrayView2<T>, x: ArrayView2<T>, with_grad: bool) -> Result<SteinKernelMatrix<T>> {
        if scores.dim() != x.dim() {
            return Err(Error::shape("ksd scores", format!("{:?}", x.dim()), format!("{:?}", scores.dim())));
        }
        let n = x.nrows();
        let d = T::from_count(x.ncols());
        let h2 = (self.log_bandwidth + self.log_bandwidth).exp();
        let h4 = h2 * h2;
        let gram = x.dot(&x.t());
        let ss = scores.dot(&scores.t());
        let sx = scores.dot(&x.t());
        let mut u = Array2::zeros((n, n));
        let mut du = if with_grad { Some(Array2::zeros((n, n))) } else { None };
        let two = T::lit(2.0);
        let half = T::lit(0.5);
        for i in 0..n {
            for j in 0..n {
                let r2 = (gram[[i, i]] + gram[[j, j]] - two * gram[[i, j]]).max(T::zero());
                let cross = (sx[[i, i]] - sx[[i, j]]) - (sx[[j, i]] - sx[[j, j]]);
                let k = (-half * r2 / h2).exp();
                let g = ss[[i, j]] + (cross + d) / h2 - r2 / h4;
                u[[i, j]] = k * g;
                if let Some(du) = du.as_mut() {
                    let dg = -two * (cross + d) / h2 + T::lit(4.0) * r2 / h4;
                    du[[i, j]] = k * (g * r2 / h2 + dg);
                }
            }
        }
        Ok(SteinKernelMatrix {
            u,
            d_log_bandwidth: du,
        })
    }

    /// Ascent on `log h` from the current value with step halving whenever the
    /// objective would decrease. Returns the final objective.
    pub fn fit(
        &mut self,
        scores: ArrayView2<T>,
        x: ArrayView2<T>,
        objective: KsdObjective,
        steps: usize,
        learning_rate: T,
    ) -> Result<T> {
        let (mut value, mut grad) = self.objective_and_grad(scores, x, objective)?;
        let mut lr = learning_rate;
        for _ in 0..steps {
            let mut accepted = false;
            for _ in 0..20 {
                let step = (lr * grad).max(-T::one()).min(T::one());
                let mut trial = *self;
                trial.set_log_bandwidth(self.log_bandwidth + step)?;
                match trial.objective_and_grad(scores, x, objective) {
                    Ok((v, g)) if v >= value => {
                        *self = trial;
                        value = v;
                        grad = g;
                        accepted = true;
                        break;
                    }
                    _ => lr *= T::lit(0.5),
                }
            }
            if !accepted {
                break;
            }
        }
        Ok(value)
    }

    fn objective_and_grad(&self, scores: ArrayView2<T>, x: ArrayView2<T>, objective: KsdObjective) -> Result<(T, T)> {
        let m = self.stein_matrix(scores, x, true)?;
        let du = m.d_log_bandwidth.expect("requested");
        let (u_off, du_off) = (off_diagonal(&m.u), off_diagonal(&du));
        match objective {
            KsdObjective::Mean => {
                let c = T::from_count(u_off.len().max(1));
                Ok((u_off.sum() / c, du_off.sum() / c))
            }
            KsdObjective::Power => {
                let (p, w) = power_objective_grad(&u_off)?;
                Ok((p, w.dot(&du_off)))
            }
        }
    }
}

fn off_diagonal<T: Real>(m: &Array2<T>) -> Array1<T> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out.push(m[[i, j]]);
            }
        }
    }
    Array1::from(out)
}

fn spread<T: Real>(values: &[T]) -> (T, T) {
    let n = values.len();
    let mean = values.iter().copied().sum::<T>() / T::from_count(n);
    if n < 2 {
        return (mean, T::zero());
    }
    let ss: T = values.iter().map(|&v| (v - mean) * (v - mean)).sum();
    (mean, (ss / T::from_count(n - 1)).sqrt())
}

/// U-statistic over ordered pairs `i ≠ j`. `std` is the sample spread of the
/// pair terms and `n` is the number of samples, so `std/√n` is the error bar.
pub fn ksd_quadratic_from_scores<T: Real>(
    scores: ArrayView2<T>,
    x: ArrayView2<T>,
    kernel: &RbfKernel<T>,
) -> Result<DiscrepancyEstimate<T>> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let m = kernel.stein_matrix(scores, x, false)?;
    let off = off_diagonal(&m.u);
    let (mean, std) = spread(off.as_slice().expect("contiguous"));
    Ok(DiscrepancyEstimate { mean, std, n })
}

pub fn ksd_quadratic<T: Real, M: ScoreModel<T> + ?Sized>(
    model: &M,
    x: ArrayView2<T>,
    kernel: &RbfKernel<T>,
) -> Result<DiscrepancyEstimate<T>> {
    let scores = model.score_batch(x)?;
    ksd_quadratic_from_scores(scores.view(), x, kernel)
}

/// Average of `u(x_{2i}, x_{2i+1})` over disjoint consecutive pairs; `n` is
/// the number of pairs. A single pair reports zero spread.
pub fn ksd_linear_from_scores<T: Real>(
    scores: ArrayView2<T>,
    x: ArrayView2<T>,
    kernel: &RbfKernel<T>,
) -> Result<DiscrepancyEstimate<T>> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    if scores.dim() != x.dim() {
        return Err(Error::shape("ksd scores", format!("{:?}", x.dim()), format!("{:?}", scores.dim())));
    }
    let pairs = n / 2;
    let vals: Vec<T> = (0..pairs)
        .map(|p| {
            let rows = [2 * p, 2 * p + 1];
            let xs = x.select(Axis(0), &rows);
            let ss = scores.select(Axis(0), &rows);
            kernel.stein_matrix(ss.view(), xs.view(), false).map(|m| m.u[[0, 1]])
        })
        .collect::<Result<_>>()?;
    let (mean, std) = spread(&vals);
    Ok(DiscrepancyEstimate { mean, std, n: pairs })
}

pub fn ksd_linear<T: Real, M: ScoreModel<T> + ?Sized>(
    model: &M,
    x: ArrayView2<T>,
    kernel: &RbfKernel<T>,
) -> Result<DiscrepancyEstimate<T>> {
    let scores = model.score_batch(x)?;
    ksd_linear_from_scores(scores.view(), x, kernel)
}
