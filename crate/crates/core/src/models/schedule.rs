use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

/// Corruption levels `beta(t)` and reverse step sizes `gamma(t)` for a
/// `steps`-step chain.
///
/// * linear: `beta(t) = beta_max * t / T`
/// * cosine: `beta(t) = beta_max * (1 - cos(pi/2 * t / T))`
///
/// Step sizes interpolate geometrically between `gamma_min` and `gamma_max`,
/// `gamma(t) = gamma_min^(1 - v) * gamma_max^v`, where `v` is a logistic
/// ramp in `u = (t - 1) / (T - 1)` centred at [`TAIL_CENTER`] with width
/// [`TAIL_WIDTH`], rescaled so `v(0) = 0` and `v(1) = 1`, plus a slight
/// linear blend. Most of the chain runs near `gamma_max`; over the last ~12%
/// of steps `gamma` collapses toward `gamma_min`. `gamma` is strictly
/// increasing in `t`.
///
/// Pair the tail with the cosine kind when sample quality matters: there
/// `beta` is already small (about 0.02 at `u = 0.12`) when the chain
/// freezes, whereas the linear kind freezes near `beta = 0.12`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub steps: usize,
    #[serde(default = "default_beta_max")]
    pub beta_max: f64,
    #[serde(default = "default_gamma_max")]
    pub gamma_max: f64,
    #[serde(default = "default_gamma_min")]
    pub gamma_min: f64,
}

pub const TAIL_CENTER: f64 = 0.12;
pub const TAIL_WIDTH: f64 = 0.012;
const RAMP_SLOPE: f64 = 1e-3;

fn default_beta_max() -> f64 {
    0.999
}

fn default_gamma_max() -> f64 {
    0.05
}

fn default_gamma_min() -> f64 {
    1e-15
}

impl NoiseSchedule {
    pub fn linear(steps: usize) -> Self {
        Self {
            kind: ScheduleKind::Linear,
            steps,
            beta_max: default_beta_max(),
            gamma_max: default_gamma_max(),
            gamma_min: default_gamma_min(),
        }
    }

    pub fn cosine(steps: usize) -> Self {
        Self {
            kind: ScheduleKind::Cosine,
            ..Self::linear(steps)
        }
    }

    pub fn with_gamma(mut self, gamma_min: f64, gamma_max: f64) -> Self {
        self.gamma_min = gamma_min;
        self.gamma_max = gamma_max;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        if !(self.beta_max > 0.0 && self.beta_max <= 1.0) {
            return Err(Error::InvalidArgument(format!("beta_max {} outside (0, 1]", self.beta_max)));
        }
        if !(self.gamma_min > 0.0 && self.gamma_max >= self.gamma_min && self.gamma_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "step sizes need 0 < gamma_min <= gamma_max, got {} and {}",
                self.gamma_min, self.gamma_max
            )));
        }
        Ok(())
    }

    /// Corruption level for any `t` in `0..=T`; `beta(0) = 0`.
    pub fn beta(&self, t: usize) -> f64 {
        assert!(t <= self.steps, "step {t} beyond schedule length {}", self.steps);
        let frac = t as f64 / self.steps as f64;
        match self.kind {
            ScheduleKind::Linear => self.beta_max * frac,
            ScheduleKind::Cosine => self.beta_max * (1.0 - (std::f64::consts::FRAC_PI_2 * frac).cos()),
        }
    }

    /// Reverse step size for `t` in `1..=T`.
    pub fn gamma(&self, t: usize) -> f64 {
        assert!(t >= 1 && t <= self.steps, "step {t} outside 1..={}", self.steps);
        if self.steps == 1 {
            return self.gamma_max;
        }
        let u = (t - 1) as f64 / (self.steps - 1) as f64;
        let ramp = |u: f64| 1.0 / (1.0 + (-(u - TAIL_CENTER) / TAIL_WIDTH).exp());
        let (lo, hi) = (ramp(0.0), ramp(1.0));
        // the linear term keeps v strictly increasing where the logistic saturates
        let v = (1.0 - RAMP_SLOPE) * (ramp(u) - lo) / (hi - lo) + RAMP_SLOPE * u;
        if t == self.steps {
            return self.gamma_max;
        }
        self.gamma_min * (self.gamma_max / self.gamma_min).powf(v)
    }

    /// `(beta(t), gamma(t))` for `1 <= t <= T`.
    pub fn eval(&self, t: usize) -> Result<(f64, f64)> {
        if t == 0 || t > self.steps {
            return Err(Error::StepOutOfRange { t, steps: self.steps });
        }
        Ok((self.beta(t), self.gamma(t)))
    }
}

/// Free-function form of [`NoiseSchedule::eval`].
pub fn schedule_eval(schedule: &NoiseSchedule, t: usize) -> Result<(f64, f64)> {
    schedule.eval(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_endpoint_is_beta_max() {
        let s = NoiseSchedule::linear(100);
        assert_eq!(s.eval(100).unwrap().0, 0.999);
        assert!(s.eval(50).unwrap().0 < s.eval(100).unwrap().0);
    }

    #[test]
    fn gamma_increases_with_t() {
        for s in [NoiseSchedule::linear(100), NoiseSchedule::cosine(37)] {
            assert!(s.eval(1).unwrap().1 < s.eval(s.steps).unwrap().1);
            for t in 2..=s.steps {
                assert!(s.gamma(t - 1) < s.gamma(t));
                assert!(s.beta(t - 1) <= s.beta(t));
            }
        }
    }

    #[test]
    fn endpoints_of_gamma() {
        let s = NoiseSchedule::linear(10).with_gamma(1e-6, 1e-2);
        assert!((s.gamma(1) - 1e-6).abs() < 1e-20);
        assert_eq!(s.gamma(10), 1e-2);
    }

    #[test]
    fn tail_is_tiny_and_bulk_is_large() {
        let s = NoiseSchedule::linear(200);
        for t in 1..=20 {
            assert!(s.gamma(t) < 1e-12, "t={t}: {}", s.gamma(t));
        }
        for t in 80..=200 {
            assert!(s.gamma(t) > 0.04, "t={t}: {}", s.gamma(t));
        }
    }

    #[test]
    fn out_of_range_steps() {
        let s = NoiseSchedule::cosine(5);
        assert!(matches!(s.eval(0), Err(Error::StepOutOfRange { .. })));
        assert!(matches!(s.eval(6), Err(Error::StepOutOfRange { .. })));
        assert_eq!(s.beta(0), 0.0);
    }

    #[test]
    fn validation() {
        assert!(NoiseSchedule::linear(0).validate().is_err());
        let mut s = NoiseSchedule::linear(3);
        s.beta_max = 1.5;
        assert!(s.validate().is_err());
        assert!(NoiseSchedule::linear(3).with_gamma(0.1, 0.01).validate().is_err());
    }
}
