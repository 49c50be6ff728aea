//! Normality check for goodness-of-fit statistics under the null.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::{HarnessError, Result};

pub const MIN_CALIBRATION_STATS: usize = 50;

/// QQ pairs against N(0, 1) plus a one-sample Kolmogorov–Smirnov test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QqReport {
    /// Empirical statistics, sorted ascending.
    pub empirical: Vec<f64>,
    /// Standard-normal quantiles at plotting positions `(i + ½)/n`.
    pub theoretical: Vec<f64>,
    pub ks_distance: f64,
    pub ks_p_value: f64,
    /// Set when all statistics are equal.
    pub degenerate: bool,
}

impl QqReport {
    /// Largest `|empirical − theoretical|` over the pairs whose plotting
    /// position lies in the central `fraction` of the distribution.
    pub fn max_central_deviation(&self, fraction: f64) -> f64 {
        let n = self.empirical.len();
        let lo = (1.0 - fraction) / 2.0;
        (0..n)
            .filter(|&i| {
                let p = (i as f64 + 0.5) / n as f64;
                p >= lo && p <= 1.0 - lo
            })
            .map(|i| (self.empirical[i] - self.theoretical[i]).abs())
            .fold(0.0, f64::max)
    }

    /// `quantile_index,theoretical,empirical` rows for plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,theoretical,empirical\n");
        for (i, (t, e)) in self.theoretical.iter().zip(&self.empirical).enumerate() {
            out.push_str(&format!("{i},{t},{e}\n"));
        }
        out
    }
}

/// Survival function of the Kolmogorov distribution,
/// `Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} exp(−2k²λ²)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// KS distance to N(0, 1) and its p-value, using the asymptotic distribution
/// with Stephens' small-sample correction `(√n + 0.12 + 0.11/√n) D`.
pub fn ks_normal(sorted: &[f64]) -> (f64, f64) {
    let normal = Normal::standard();
    let n = sorted.len() as f64;
    let d = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let sn = n.sqrt();
    (d, kolmogorov_survival((sn + 0.12 + 0.11 / sn) * d))
}

pub fn calibration_report(stats: &[f64]) -> Result<QqReport> {
    if stats.len() < MIN_CALIBRATION_STATS {
        return Err(HarnessError::InsufficientData {
            needed: MIN_CALIBRATION_STATS,
            got: stats.len(),
        });
    }
    if let Some(i) = stats.iter().position(|v| !v.is_finite()) {
        return Err(HarnessError::Core(steinlearn::Error::Numeric {
            context: "calibration statistics",
            index: i,
        }));
    }
    let mut empirical = stats.to_vec();
    empirical.sort_by(f64::total_cmp);
    let n = empirical.len();
    let normal = Normal::standard();
    let theoretical = (0..n).map(|i| normal.inverse_cdf((i as f64 + 0.5) / n as f64)).collect();
    let (ks_distance, ks_p_value) = ks_normal(&empirical);
    let degenerate = empirical[0] == empirical[n - 1];
    Ok(QqReport {
        empirical,
        theoretical,
        ks_distance,
        ks_p_value,
        degenerate,
    })
}
