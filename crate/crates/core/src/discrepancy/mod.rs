//! Stein statistics: per-example terms, LSD/LSDE estimates, the critic
//! regularizer, the test-power objective, kernel baselines and closed-form
//! Gaussian oracles.

mod kernel;
mod oracle;

pub use kernel::{
    ksd_linear, ksd_linear_from_scores, ksd_quadratic, ksd_quadratic_from_scores, median_bandwidth, KsdObjective,
    MedianBandwidth, RbfKernel, SteinKernelMatrix,
};
pub use oracle::{gaussian_sd_oracle, OptimalGaussianCritic};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::diffnet::MlpNet;
use crate::rng::{probe_matrix, rng_from_seed, ProbeKind};
use crate::scorezoo::{ScoreModel, SlicedScoreMatching};
use crate::{Error, Real, Result};

/// How the Jacobian trace inside each Stein term was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    ExactTrace,
    Hutchinson,
    Kernel,
}

impl TraceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::ExactTrace => "exact_trace",
            TraceKind::Hutchinson => "hutchinson",
            TraceKind::Kernel => "kernel",
        }
    }
}

/// Per-example Stein statistics `s_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteinTerms<T> {
    values: Array1<T>,
    kind: TraceKind,
}

impl<T: Real> SteinTerms<T> {
    pub fn new(values: Array1<T>, kind: TraceKind) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                context: "stein terms",
                index: i,
            });
        }
        Ok(SteinTerms { values, kind })
    }

    pub fn values(&self) -> &Array1<T> {
        &self.values
    }

    pub fn kind(&self) -> TraceKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> T {
        self.values.sum() / T::from_count(self.len())
    }
}

/// Sample mean, sample standard deviation (n − 1 denominator) and count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyEstimate<T> {
    pub mean: T,
    pub std: T,
    pub n: usize,
}

impl<T: Real> DiscrepancyEstimate<T> {
    pub fn from_values(values: &[T]) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::InsufficientData { needed: 2, got: n });
        }
        let mean = values.iter().copied().sum::<T>() / T::from_count(n);
        let ss: T = values.iter().map(|&v| (v - mean) * (v - mean)).sum();
        Ok(DiscrepancyEstimate {
            mean,
            std: (ss / T::from_count(n - 1)).sqrt(),
            n,
        })
    }

    /// `std / √n`, the standard deviation of the sample mean.
    pub fn standard_error(&self) -> T {
        self.std / T::from_count(self.n).sqrt()
    }
}

/// One row of the estimate CSV: `experiment_id, kind, n, mean, std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub experiment_id: String,
    pub kind: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

impl EstimateRecord {
    pub fn new<T: Real>(experiment_id: impl Into<String>, kind: TraceKind, est: &DiscrepancyEstimate<T>) -> Self {
        EstimateRecord {
            experiment_id: experiment_id.into(),
            kind: kind.as_str().to_string(),
            n: est.n,
            mean: est.mean.as_f64(),
            std: est.std.as_f64(),
        }
    }
}

/// A vector field `f: ℝᵈ → ℝᵈ` usable as a Stein critic.
pub trait Critic<T: Real> {
    fn dim(&self) -> usize;

    fn eval_batch(&self, x: ArrayView2<T>) -> Result<Array2<T>>;

    /// Outputs and exact Jacobian traces per row.
    fn eval_with_trace(&self, x: ArrayView2<T>) -> Result<(Array2<T>, Array1<T>)>;

    /// Outputs and Jacobian-vector products `(∂f/∂x) v_i` per row.
    fn eval_with_jvp(&self, x: ArrayView2<T>, v: ArrayView2<T>) -> Result<(Array2<T>, Array2<T>)>;
}

impl<T: Real> Critic<T> for MlpNet<T> {
    fn dim(&self) -> usize {
        self.d_in()
    }

    fn eval_batch(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.forward_batch(x)
    }

    fn eval_with_trace(&self, x: ArrayView2<T>) -> Result<(Array2<T>, Array1<T>)> {
        self.forward_with_trace(x)
    }

    fn eval_with_jvp(&self, x: ArrayView2<T>, v: ArrayView2<T>) -> Result<(Array2<T>, Array2<T>)> {
        self.jvp_batch(x, v)
    }
}

fn check_pair<T: Real, C: Critic<T> + ?Sized, M: ScoreModel<T> + ?Sized>(
    critic: &C,
    model: &M,
    x: &ArrayView2<T>,
) -> Result<()> {
    if critic.dim() != model.dim() {
        return Err(Error::shape("critic vs model dimension", model.dim(), critic.dim()));
    }
    if x.ncols() != model.dim() {
        return Err(Error::shape("sample columns", model.dim(), x.ncols()));
    }
    if let Some(i) = x.axis_iter(Axis(0)).position(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Numeric {
            context: "sample rows",
            index: i,
        });
    }
    Ok(())
}

/// `s_i = score(x_i)ᵀ f(x_i) + Tr ∇f(x_i)` with the exact trace.
pub fn stein_terms_exact<T: Real, C: Critic<T> + ?Sized, M: ScoreModel<T> + ?Sized>(
    critic: &C,
    model: &M,
    x: ArrayView2<T>,
) -> Result<SteinTerms<T>> {
    check_pair(critic, model, &x)?;
    let scores = model.score_batch(x)?;
    stein_terms_exact_with_scores(critic, x, scores.view())
}

/// As [`stein_terms_exact`] with the model scores precomputed.
pub fn stein_terms_exact_with_scores<T: Real, C: Critic<T> + ?Sized>(
    critic: &C,
    x: ArrayView2<T>,
    scores: ArrayView2<T>,
) -> Result<SteinTerms<T>> {
    if scores.dim() != x.dim() {
        return Err(Error::shape("scores", format!("{:?}", x.dim()), format!("{:?}", scores.dim())));
    }
    let (f, tr) = critic.eval_with_trace(x)?;
    SteinTerms::new((&scores * &f).sum_axis(Axis(1)) + tr, TraceKind::ExactTrace)
}

/// Trace replaced by `εᵢᵀ(∂f/∂x)εᵢ` with one fresh standard-normal probe per row.
pub fn stein_terms_hutchinson<T: Real, C: Critic<T> + ?Sized, M: ScoreModel<T> + ?Sized>(
    critic: &C,
    model: &M,
    x: ArrayView2<T>,
    seed: u64,
) -> Result<SteinTerms<T>> {
    let probes = probe_matrix(&mut rng_from_seed(seed), ProbeKind::Gaussian, x.nrows(), x.ncols());
    stein_terms_with_probes(critic, model, x, probes.view())
}

/// Hutchinson terms with caller-supplied probes (one row per example).
pub fn stein_terms_with_probes<T: Real, C: Critic<T> + ?Sized, M: ScoreModel<T> + ?Sized>(
    critic: &C,
    model: &M,
    x: ArrayView2<T>,
    probes: ArrayView2<T>,
) -> Result<SteinTerms<T>> {
    check_pair(critic, model, &x)?;
    if probes.dim() != x.dim() {
        return Err(Error::shape("probes", format!("{:?}", x.dim()), format!("{:?}", probes.dim())));
    }
    let scores = model.score_batch(x)?;
    let (f, jv) = critic.eval_with_jvp(x, probes)?;
    SteinTerms::new(
        (&scores * &f).sum_axis(Axis(1)) + (&probes * &jv).sum_axis(Axis(1)),
        TraceKind::Hutchinson,
    )
}

/// `λ · mean_i ‖f(x_i)‖²`.
pub fn regularizer<T: Real, C: Critic<T> + ?Sized>(critic: &C, x: ArrayView2<T>, lambda: T) -> Result<T> {
    if !(lambda >= T::zero()) {
        return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {lambda}")));
    }
    if lambda == T::zero() || x.nrows() == 0 {
        return Ok(T::zero());
    }
    let f = critic.eval_batch(x)?;
    Ok(lambda * (&f * &f).sum() / T::from_count(x.nrows()))
}

pub fn lsd_estimate<T: Real>(terms: &SteinTerms<T>) -> Result<DiscrepancyEstimate<T>> {
    DiscrepancyEstimate::from_values(terms.values().as_slice().expect("contiguous"))
}

/// `mean / std` of the terms.
pub fn power_objective<T: Real>(terms: &SteinTerms<T>) -> Result<T> {
    let est = lsd_estimate(terms)?;
    if !(est.std > T::zero()) {
        return Err(Error::Degenerate("power objective needs a nonzero spread of terms".into()));
    }
    Ok(est.mean / est.std)
}

/// Power objective `𝒫 = μ/σ` and `∂𝒫/∂s_i` for every term.
pub fn power_objective_grad<T: Real>(values: &Array1<T>) -> Result<(T, Array1<T>)> {
    let est = DiscrepancyEstimate::from_values(values.as_slice().expect("contiguous"))?;
    let std = est.std;
    if !(std > T::epsilon() * (T::one() + est.mean.abs())) {
        return Err(Error::Degenerate("spread of Stein terms underflowed".into()));
    }
    let n = T::from_count(est.n);
    let n1 = T::from_count(est.n - 1);
    let mu = est.mean;
    let w = values.mapv(|s| T::one() / (n * std) - mu * (s - mu) / (n1 * std * std * std));
    Ok((mu / std, w))
}

/// Sliced score matching `½‖s(x)‖² + εᵀ(∂s/∂x)ε` averaged over rows with one
/// standard-normal probe per row, and its parameter gradient.
pub fn sliced_sm_objective<T: Real, M: SlicedScoreMatching<T> + ?Sized>(
    model: &M,
    x: ArrayView2<T>,
    seed: u64,
) -> Result<(T, Array1<T>)> {
    let probes = probe_matrix(&mut rng_from_seed(seed), ProbeKind::Gaussian, x.nrows(), x.ncols());
    model.sliced_sm_grad(x, probes.view())
}

/// Value of the sliced score matching objective only.
pub fn sliced_sm_value<T: Real, M: SlicedScoreMatching<T> + ?Sized>(model: &M, x: ArrayView2<T>, seed: u64) -> Result<T> {
    let probes = probe_matrix(&mut rng_from_seed(seed), ProbeKind::Gaussian, x.nrows(), x.ncols());
    let t = model.sliced_sm_terms(x, probes.view())?;
    Ok(t.sum() / T::from_count(t.len().max(1)))
}
