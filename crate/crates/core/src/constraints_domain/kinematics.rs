use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::distance;
use crate::projections::Constraint;

/// Tolerance of the position-match predicate.
pub const KINEMATICS_TOL: f64 = 1e-9;

/// Constant-acceleration motion from `p0` with unit timestep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicsSpec {
    pub p0: f64,
    #[serde(default)]
    pub v0: f64,
    pub g: f64,
    /// Number of frames after the initial one.
    pub horizon: usize,
}

impl KinematicsSpec {
    pub fn new(p0: f64, g: f64, horizon: usize) -> Result<Self> {
        let s = Self { p0, v0: 0.0, g, horizon };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("kinematics horizon must be at least 1".into()));
        }
        if !(self.p0.is_finite() && self.v0.is_finite() && self.g.is_finite()) {
            return Err(Error::NonFinite("kinematics spec"));
        }
        Ok(())
    }
}

/// Positions `p_1..p_F` under `v_t = v_{t-1} + g`,
/// `p_t = p_{t-1} + v_{t-1} + g / 2`.
pub fn kinematics_rollout(spec: &KinematicsSpec) -> Vec<f64> {
    let (mut p, mut v) = (spec.p0, spec.v0);
    (0..spec.horizon)
        .map(|_| {
            p += v + 0.5 * spec.g;
            v += spec.g;
            p
        })
        .collect()
}

/// The sequence equals the rollout at every frame.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicsConstraint {
    spec: KinematicsSpec,
    target: Vec<f64>,
}

pub fn kinematics_constraint(spec: &KinematicsSpec) -> Result<KinematicsConstraint> {
    spec.validate()?;
    Ok(KinematicsConstraint {
        spec: *spec,
        target: kinematics_rollout(spec),
    })
}

impl KinematicsConstraint {
    pub fn spec(&self) -> &KinematicsSpec {
        &self.spec
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.target.len() {
            return Err(Error::DimensionMismatch {
                expected: self.target.len(),
                actual: x.len(),
            });
        }
        Ok(())
    }
}

impl Constraint for KinematicsConstraint {
    fn name(&self) -> &str {
        "kinematics"
    }

    fn residual(&self, x: &[f64]) -> f64 {
        self.check(x).expect("kinematics sample length");
        distance(x, &self.target)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let r = self.residual(x);
        if r == 0.0 {
            return vec![0.0; x.len()];
        }
        x.iter().zip(&self.target).map(|(a, b)| (a - b) / r).collect()
    }

    fn check_tolerance(&self) -> f64 {
        KINEMATICS_TOL
    }

    fn is_satisfied(&self, x: &[f64]) -> bool {
        x.len() == self.target.len() && x.iter().zip(&self.target).all(|(a, b)| (a - b).abs() <= KINEMATICS_TOL)
    }

    fn is_convex(&self) -> bool {
        true
    }

    fn project_exact(&self, x: &[f64]) -> Option<Vec<f64>> {
        (x.len() == self.target.len()).then(|| self.target.clone())
    }

    fn supports_exact_projection(&self) -> bool {
        true
    }
}
