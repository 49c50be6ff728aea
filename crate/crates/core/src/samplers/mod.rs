//! Data generation and post-hoc sampling.

mod io;
mod sgld;

pub use io::{matrix_from_bytes, matrix_to_bytes, read_matrix, read_sidecar, write_matrix, SampleManifest, MATRIX_MAGIC};
pub use sgld::{sgld_sample, SgldBatch, SgldConfig, SgldInit};

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{normal, normal_matrix, rng_from_seed};
use crate::scorezoo::{GbrbmModel, IcaModel};
use crate::{Error, Real, Result};

pub const DEFAULT_BURN_IN: usize = 2000;
pub const DEFAULT_THIN: usize = 10;
/// Largest hidden layer sampled exactly by enumerating all hidden states.
pub const EXACT_HIDDEN_LIMIT: usize = 10;
const MAX_ENUMERATED_HIDDEN: usize = 20;

/// How RBM data is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum RbmSampling {
    /// Exact when `d_h ≤ 10`, Gibbs with default burn-in and thinning otherwise.
    #[default]
    Auto,
    Exact,
    Gibbs { burn_in: usize, thin: usize },
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Block Gibbs on a single chain. With hidden units in `{-1, +1}`,
/// `P(h_j = +1 | x) = sigmoid(2 (Bᵀx + c)_j)` and `x | h ~ N(b + Bh, I)`.
pub fn gbrbm_gibbs<T: Real>(m: &GbrbmModel<T>, n: usize, burn_in: usize, thin: usize, seed: u64) -> Result<Array2<T>> {
    if n == 0 || thin == 0 {
        return Err(Error::InvalidConfig("gibbs needs n >= 1 and thin >= 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let (dx, dh) = (m.d_x(), m.d_h());
    let mut x: Array1<T> = m.visible_bias() + &Array1::from_shape_simple_fn(dx, || normal::<T, _>(&mut rng));
    let mut h = Array1::<T>::zeros(dh);
    let mut out = Array2::zeros((n, dx));
    let total = burn_in + n * thin;
    let mut kept = 0;
    for step in 1..=total {
        let a = x.dot(m.weights()) + m.hidden_bias();
        for j in 0..dh {
            let p = sigmoid(2.0 * a[j].as_f64());
            h[j] = if rng.random::<f64>() < p { T::one() } else { -T::one() };
        }
        x = m.weights().dot(&h) + m.visible_bias();
        x.mapv_inplace(|v| v + normal::<T, _>(&mut rng));
        if step > burn_in && (step - burn_in).is_multiple_of(thin) {
            out.row_mut(kept).assign(&x);
            kept += 1;
        }
    }
    Ok(out)
}

/// Marginal log-weights of every hidden configuration,
/// `log p(h) = cᵀh + ½‖b + Bh‖² + const`; bit `j` of the index set means `h_j = +1`.
pub fn gbrbm_hidden_log_weights<T: Real>(m: &GbrbmModel<T>) -> Result<Vec<f64>> {
    let dh = m.d_h();
    if dh > MAX_ENUMERATED_HIDDEN {
        return Err(Error::InvalidConfig(format!("hidden enumeration over 2^{dh} states is too large")));
    }
    let w = m.weights().mapv(|v| v.as_f64());
    let b = m.visible_bias().mapv(|v| v.as_f64());
    let c = m.hidden_bias().mapv(|v| v.as_f64());
    Ok((0..1usize << dh)
        .map(|bits| {
            let h = hidden_state(bits, dh);
            let mean = w.dot(&h) + &b;
            c.dot(&h) + 0.5 * mean.dot(&mean)
        })
        .collect())
}

pub(crate) fn hidden_state(bits: usize, dh: usize) -> Array1<f64> {
    (0..dh).map(|j| if bits >> j & 1 == 1 { 1.0 } else { -1.0 }).collect()
}

/// Exact i.i.d. sampling: draw `h` from its enumerated marginal, then `x | h`.
pub fn gbrbm_exact<T: Real>(m: &GbrbmModel<T>, n: usize, seed: u64) -> Result<Array2<T>> {
    let logw = gbrbm_hidden_log_weights(m)?;
    let mx = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut cdf = Vec::with_capacity(logw.len());
    let mut acc = 0.0;
    for l in &logw {
        acc += (l - mx).exp();
        cdf.push(acc);
    }
    let mut rng = rng_from_seed(seed);
    let dh = m.d_h();
    let mut h = Array2::<T>::zeros((n, dh));
    for mut row in h.axis_iter_mut(Axis(0)) {
        let u = rng.random::<f64>() * acc;
        let idx = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        row.assign(&hidden_state(idx, dh).mapv(T::lit));
    }
    let noise: Array2<T> = normal_matrix(&mut rng, n, m.d_x());
    Ok(m.visible_mean(h.view())? + noise)
}

/// Draws RBM data under the given protocol.
pub fn gbrbm_sample<T: Real>(m: &GbrbmModel<T>, n: usize, protocol: RbmSampling, seed: u64) -> Result<Array2<T>> {
    match protocol {
        RbmSampling::Auto if m.d_h() <= EXACT_HIDDEN_LIMIT => gbrbm_exact(m, n, seed),
        RbmSampling::Auto => gbrbm_gibbs(m, n, DEFAULT_BURN_IN, DEFAULT_THIN, seed),
        RbmSampling::Exact => gbrbm_exact(m, n, seed),
        RbmSampling::Gibbs { burn_in, thin } => gbrbm_gibbs(m, n, burn_in, thin, seed),
    }
}

/// Laplace(0, 1) by inverse CDF: `u ~ U(−½, ½)`, `z = −sign(u) ln(1 − 2|u|)`.
pub fn laplace<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    let u = rng.random::<f64>() - 0.5;
    T::lit(-u.signum() * (1.0 - 2.0 * u.abs()).ln())
}

/// Rows `x = Wz` with i.i.d. Laplace sources.
pub fn ica_sample<T: Real>(m: &IcaModel<T>, n: usize, seed: u64) -> Result<Array2<T>> {
    if n == 0 {
        return Err(Error::InvalidConfig("ica_sample needs n >= 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let d = m.mixing().nrows();
    let z = Array2::from_shape_simple_fn((n, d), || laplace::<T, _>(&mut rng));
    Ok(z.dot(&m.mixing().t()))
}
