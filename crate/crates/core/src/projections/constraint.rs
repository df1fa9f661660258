use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::dot;
use crate::projections::exact::{project_box, project_halfspace};

/// Default tolerance under which a residual counts as satisfied.
pub const DELTA_CHECK: f64 = 1e-8;

/// A constraint on a flat real vector: a hard predicate paired with a
/// nonnegative residual that vanishes (up to [`check_tolerance`]) exactly
/// when the predicate holds.
///
/// [`check_tolerance`]: Constraint::check_tolerance
pub trait Constraint: Send + Sync {
    fn name(&self) -> &str;

    fn residual(&self, x: &[f64]) -> f64;

    /// Gradient of [`residual`](Constraint::residual). At hinge kinks any
    /// subgradient is acceptable.
    fn gradient(&self, x: &[f64]) -> Vec<f64>;

    /// Number of terms the residual splits into. The ALM keeps one
    /// multiplier per term.
    fn num_parts(&self) -> usize {
        1
    }

    /// Residual terms; they sum to [`residual`](Constraint::residual).
    fn residual_parts(&self, x: &[f64]) -> Vec<f64> {
        vec![self.residual(x)]
    }

    /// `sum_k weights[k] * grad r_k(x)` over the residual terms.
    fn weighted_gradient(&self, x: &[f64], weights: &[f64]) -> Vec<f64> {
        let w = weights[0];
        self.gradient(x).into_iter().map(|g| w * g).collect()
    }

    fn check_tolerance(&self) -> f64 {
        DELTA_CHECK
    }

    fn is_satisfied(&self, x: &[f64]) -> bool {
        self.residual(x) <= self.check_tolerance()
    }

    fn is_convex(&self) -> bool;

    /// Closed-form projection onto the feasible set, when one exists.
    fn project_exact(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    fn supports_exact_projection(&self) -> bool {
        false
    }
}

/// Conjunction of constraints. The aggregate residual is the plain sum of
/// member residuals.
#[derive(Clone, Default)]
pub struct ConstraintSet {
    members: Vec<Arc<dyn Constraint>>,
}

impl fmt::Debug for ConstraintSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.members.iter().map(|c| c.name())).finish()
    }
}

impl ConstraintSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, c: impl Constraint + 'static) -> Self {
        self.members.push(Arc::new(c));
        self
    }

    pub fn push(&mut self, c: Arc<dyn Constraint>) {
        self.members.push(c);
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[Arc<dyn Constraint>] {
        &self.members
    }

    pub fn names(&self) -> Vec<String> {
        self.members.iter().map(|c| c.name().to_string()).collect()
    }

    pub fn residuals(&self, x: &[f64]) -> Vec<f64> {
        self.members.iter().map(|c| c.residual(x)).collect()
    }

    pub fn num_parts(&self) -> usize {
        self.members.iter().map(|c| c.num_parts()).sum()
    }

    /// Residual terms of all members, concatenated.
    pub fn residual_parts(&self, x: &[f64]) -> Vec<f64> {
        self.members.iter().flat_map(|c| c.residual_parts(x)).collect()
    }

    /// Weighted sum of residual-term gradients; `weights` follows
    /// [`residual_parts`](Self::residual_parts).
    pub fn weighted_gradient(&self, x: &[f64], weights: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        let mut at = 0;
        for c in &self.members {
            let k = c.num_parts();
            let w = &weights[at..at + k];
            at += k;
            if w.iter().all(|v| *v == 0.0) {
                continue;
            }
            for (gi, di) in g.iter_mut().zip(c.weighted_gradient(x, w)) {
                *gi += di;
            }
        }
        g
    }

    pub fn aggregate_residual(&self, x: &[f64]) -> f64 {
        self.members.iter().map(|c| c.residual(x)).sum()
    }

    pub fn is_satisfied(&self, x: &[f64]) -> bool {
        self.members.iter().all(|c| c.is_satisfied(x))
    }

    pub fn is_convex(&self) -> bool {
        self.members.iter().all(|c| c.is_convex())
    }

    /// Exact projection for the empty set (identity) or a single member with
    /// a closed form. Intersections go through the ALM.
    pub fn project_exact(&self, x: &[f64]) -> Option<Vec<f64>> {
        match self.members.as_slice() {
            [] => Some(x.to_vec()),
            [only] => only.project_exact(x),
            _ => None,
        }
    }
}

/// A set is itself a constraint: the conjunction of its members, with one
/// residual part per member part.
impl Constraint for ConstraintSet {
    fn name(&self) -> &str {
        "all"
    }

    fn residual(&self, x: &[f64]) -> f64 {
        self.aggregate_residual(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for c in &self.members {
            for (gi, di) in g.iter_mut().zip(c.gradient(x)) {
                *gi += di;
            }
        }
        g
    }

    fn num_parts(&self) -> usize {
        ConstraintSet::num_parts(self)
    }

    fn residual_parts(&self, x: &[f64]) -> Vec<f64> {
        ConstraintSet::residual_parts(self, x)
    }

    fn weighted_gradient(&self, x: &[f64], weights: &[f64]) -> Vec<f64> {
        ConstraintSet::weighted_gradient(self, x, weights)
    }

    fn is_satisfied(&self, x: &[f64]) -> bool {
        ConstraintSet::is_satisfied(self, x)
    }

    fn is_convex(&self) -> bool {
        ConstraintSet::is_convex(self)
    }

    fn project_exact(&self, x: &[f64]) -> Option<Vec<f64>> {
        ConstraintSet::project_exact(self, x)
    }

    fn supports_exact_projection(&self) -> bool {
        match self.members.as_slice() {
            [] => true,
            [only] => only.supports_exact_projection(),
            _ => false,
        }
    }
}

/// `a . x <= b` with hinge residual `max(0, a . x - b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    name: String,
    a: Vec<f64>,
    b: f64,
}

impl LinearConstraint {
    pub fn new(a: Vec<f64>, b: f64) -> Result<Self> {
        if a.is_empty() || a.iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidArgument("halfspace normal must be nonzero".into()));
        }
        if a.iter().any(|v| !v.is_finite()) || !b.is_finite() {
            return Err(Error::NonFinite("halfspace coefficients"));
        }
        Ok(Self {
            name: "halfspace".into(),
            a,
            b,
        })
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    pub fn normal(&self) -> &[f64] {
        &self.a
    }

    pub fn offset(&self) -> f64 {
        self.b
    }
}

/// Hinge residual constraint `max(0, a . x - b)`.
pub fn residual_linear(a: Vec<f64>, b: f64) -> Result<LinearConstraint> {
    LinearConstraint::new(a, b)
}

impl Constraint for LinearConstraint {
    fn name(&self) -> &str {
        &self.name
    }

    fn residual(&self, x: &[f64]) -> f64 {
        (dot(&self.a, x) - self.b).max(0.0)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        if dot(&self.a, x) > self.b {
            self.a.clone()
        } else {
            vec![0.0; x.len()]
        }
    }

    fn is_convex(&self) -> bool {
        true
    }

    fn project_exact(&self, x: &[f64]) -> Option<Vec<f64>> {
        project_halfspace(x, &self.a, self.b).ok()
    }

    fn supports_exact_projection(&self) -> bool {
        true
    }
}

/// Axis-aligned box `lo <= x <= hi` with residual
/// `sum max(0, x - hi) + max(0, lo - x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxConstraint {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxConstraint {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        // validates bounds
        project_box(&lo, &lo, &hi)?;
        Ok(Self { lo, hi })
    }

    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }
}

impl Constraint for BoxConstraint {
    fn name(&self) -> &str {
        "box"
    }

    fn residual(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (lo, hi))| (v - hi).max(0.0) + (lo - v).max(0.0))
            .sum()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (lo, hi))| {
                if v > hi {
                    1.0
                } else if v < lo {
                    -1.0
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// One term per coordinate.
    fn num_parts(&self) -> usize {
        self.lo.len()
    }

    fn residual_parts(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (lo, hi))| (v - hi).max(0.0) + (lo - v).max(0.0))
            .collect()
    }

    fn weighted_gradient(&self, x: &[f64], weights: &[f64]) -> Vec<f64> {
        self.gradient(x).into_iter().zip(weights).map(|(g, w)| g * w).collect()
    }

    fn is_convex(&self) -> bool {
        true
    }

    fn project_exact(&self, x: &[f64]) -> Option<Vec<f64>> {
        project_box(x, &self.lo, &self.hi).ok()
    }

    fn supports_exact_projection(&self) -> bool {
        true
    }
}
