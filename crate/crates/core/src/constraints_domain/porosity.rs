use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projections::{project_topk_negative, Constraint};

/// Width of the sigmoid used for the smooth negative-cell count.
pub const SOFT_COUNT_WIDTH: f64 = 0.05;

/// Value given to cells flipped by the exact projection.
pub const FLIP_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PorosityTarget {
    pub rows: usize,
    pub cols: usize,
    /// Required number of negative cells.
    pub k: usize,
}

impl PorosityTarget {
    pub fn new(rows: usize, cols: usize, k: usize) -> Result<Self> {
        if k > rows * cols {
            return Err(Error::InvalidArgument(format!("K = {k} exceeds {rows}x{cols} grid")));
        }
        Ok(Self { rows, cols, k })
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }
}

pub fn negative_count(grid: &[f64]) -> usize {
    grid.iter().filter(|v| **v < 0.0).count()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `sum_i sigmoid(-x_i / width)`.
pub fn soft_negative_count(grid: &[f64], width: f64) -> f64 {
    grid.iter().map(|v| sigmoid(-v / width)).sum()
}

/// Exactly `K` cells of the grid are negative.
///
/// The residual is zero when the hard count matches. Otherwise it is the
/// smooth-count gap, floored at one half so a wrong hard count is never
/// reported as (nearly) satisfied.
#[derive(Debug, Clone, PartialEq)]
pub struct PorosityConstraint {
    target: PorosityTarget,
    width: f64,
}

pub fn porosity_constraint(target: PorosityTarget) -> PorosityConstraint {
    PorosityConstraint {
        target,
        width: SOFT_COUNT_WIDTH,
    }
}

impl PorosityConstraint {
    pub fn target(&self) -> PorosityTarget {
        self.target
    }

    fn check_len(&self, x: &[f64]) {
        assert_eq!(x.len(), self.target.cells(), "grid size mismatch");
    }
}

impl Constraint for PorosityConstraint {
    fn name(&self) -> &str {
        "porosity"
    }

    fn residual(&self, x: &[f64]) -> f64 {
        self.check_len(x);
        if negative_count(x) == self.target.k {
            return 0.0;
        }
        (soft_negative_count(x, self.width) - self.target.k as f64).abs().max(0.5)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.check_len(x);
        if negative_count(x) == self.target.k {
            return vec![0.0; x.len()];
        }
        let sign = if soft_negative_count(x, self.width) > self.target.k as f64 {
            1.0
        } else {
            -1.0
        };
        x.iter()
            .map(|v| {
                let s = sigmoid(-v / self.width);
                -sign * s * (1.0 - s) / self.width
            })
            .collect()
    }

    fn is_satisfied(&self, x: &[f64]) -> bool {
        negative_count(x) == self.target.k
    }

    fn is_convex(&self) -> bool {
        false
    }

    /// Clamps to `[-1, 1]`, then flips the cells nearest the sign boundary.
    fn project_exact(&self, x: &[f64]) -> Option<Vec<f64>> {
        let clamped: Vec<f64> = x.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        project_topk_negative(&clamped, self.target.k, FLIP_EPSILON).ok()
    }

    fn supports_exact_projection(&self) -> bool {
        true
    }
}
