use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::NoiseSchedule;
use crate::numerics::{logsumexp, SeededRng, SimplexRow};

/// Diagonal-covariance Gaussian mixture.
///
/// Under corruption level `beta` each component `N(mu, diag s2)` becomes
/// `N(sqrt(1 - beta) mu, diag((1 - beta) s2 + beta))`, the marginal of the
/// variance-preserving forward process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    weights: SimplexRow,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

impl GaussianMixture {
    pub fn new(weights: SimplexRow, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let k = weights.len();
        if means.len() != k || variances.len() != k {
            return Err(Error::InvalidArgument(format!(
                "{k} weights but {} means and {} variance vectors",
                means.len(),
                variances.len()
            )));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::InvalidArgument("zero-dimensional mixture".into()));
        }
        for (m, v) in means.iter().zip(&variances) {
            if m.len() != dim || v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: m.len().min(v.len()),
                });
            }
            if v.iter().any(|s| !(*s > 0.0) || !s.is_finite()) || m.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument("variances must be positive and finite".into()));
            }
        }
        Ok(Self { weights, means, variances })
    }

    /// Single isotropic component `N(mean, variance * I)`.
    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Result<Self> {
        let dim = mean.len();
        Self::new(SimplexRow::one_hot(1, 0), vec![mean], vec![vec![variance; dim]])
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &SimplexRow {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    fn smoothed(&self, k: usize, i: usize, beta: f64) -> (f64, f64) {
        let keep = 1.0 - beta;
        (keep.sqrt() * self.means[k][i], keep * self.variances[k][i] + beta)
    }

    fn component_log_densities(&self, x: &[f64], beta: f64) -> Vec<f64> {
        (0..self.components())
            .map(|k| {
                let w = self.weights[k];
                if w == 0.0 {
                    return f64::NEG_INFINITY;
                }
                let mut lp = w.ln();
                for (i, xi) in x.iter().enumerate() {
                    let (m, v) = self.smoothed(k, i, beta);
                    lp -= 0.5 * ((xi - m) * (xi - m) / v + (2.0 * std::f64::consts::PI * v).ln());
                }
                lp
            })
            .collect()
    }

    /// Log-density of the mixture smoothed to corruption level `beta`.
    pub fn log_density(&self, x: &[f64], beta: f64) -> Result<f64> {
        self.check_dim(x)?;
        Ok(logsumexp(&self.component_log_densities(x, beta)))
    }

    /// Exact `grad log p_beta(x)`: responsibility-weighted sum of the
    /// per-component Gaussian scores.
    pub fn score_at_level(&self, x: &[f64], beta: f64) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidArgument(format!("corruption level {beta} outside [0, 1]")));
        }
        let logs = self.component_log_densities(x, beta);
        let norm = logsumexp(&logs);
        let mut score = vec![0.0; x.len()];
        for (k, lp) in logs.iter().enumerate() {
            let r = (lp - norm).exp();
            if r == 0.0 {
                continue;
            }
            for (i, xi) in x.iter().enumerate() {
                let (m, v) = self.smoothed(k, i, beta);
                score[i] += r * (m - xi) / v;
            }
        }
        Ok(score)
    }

    pub fn sample(&self, n: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let k = rng.categorical(self.weights.as_slice());
                self.means[k]
                    .iter()
                    .zip(&self.variances[k])
                    .map(|(m, v)| m + v.sqrt() * rng.normal())
                    .collect()
            })
            .collect()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }
}

/// Score of the smoothed mixture at step `t` of `schedule`.
pub fn gmm_score(mixture: &GaussianMixture, schedule: &NoiseSchedule, x: &[f64], t: usize) -> Result<Vec<f64>> {
    let (beta, _) = schedule.eval(t)?;
    mixture.score_at_level(x, beta)
}
